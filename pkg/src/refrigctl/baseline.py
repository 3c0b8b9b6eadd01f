"""Traditional control: per-case hysteresis on the valves, PI on the compressor rack."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from refrigctl.plant import ControlInput, PlantState
from refrigctl.thermo import PlantParams


@dataclass(frozen=True)
class HysteresisState:
    previous: tuple[int, ...]

    @classmethod
    def closed(cls, n: int) -> "HysteresisState":
        return cls((0,) * n)


@dataclass(frozen=True)
class PIState:
    integral: float = 0.0   # bar s
    n_on: int = 0


def hysteresis_valve_law(T_air, hstate: HysteresisState, params: PlantParams):
    """Open above T_max, close below T_min, otherwise hold the last command."""
    T_air = np.asarray(T_air, dtype=float)
    prev = np.asarray(hstate.previous, dtype=np.int8)
    u = np.where(T_air > params.vec("T_max"), 1, np.where(T_air < params.vec("T_min"), 0, prev))
    u = u.astype(np.int8)
    return u, HysteresisState(tuple(int(b) for b in u))


def pi_error(P_suc: float, params: PlantParams) -> float:
    """Pressure deviation from the reference, zeroed inside the dead band."""
    d = P_suc - params.P_ref
    return d if abs(d) > params.DB else 0.0


def pi_output(e: float, pistate: PIState, h: float, params: PlantParams):
    """Advance the integral by ``e*h`` and return ``K_P e + integral / K_I``."""
    if not h > 0:
        raise ValueError("h must be positive")
    integral = pistate.integral + e * h
    out = params.K_P * e + integral / params.K_I
    return out, PIState(integral, pistate.n_on)


def compressor_thresholding(u_pi: float, params: PlantParams) -> np.ndarray:
    """Run the first floor(u_PI) compressors, clamped to [0, n_c]."""
    if math.isnan(u_pi):
        raise ValueError("PI output is NaN")
    n_on = int(min(max(math.floor(u_pi) if math.isfinite(u_pi) else math.copysign(params.n_c, u_pi), 0),
                   params.n_c))
    bits = np.zeros(params.n_c, dtype=np.int8)
    bits[:n_on] = 1
    return bits


class BaselineController:
    """Hysteresis valves evaluated every call, PI compressors every ``pi_period`` seconds.

    The PI is fed the dead-banded pressure *deficit* (reference minus
    measurement). With the negative integral gain of the benchmark table this
    is the sign that makes high suction pressure switch compressors on.
    While the rack is already all-off or all-on, an update that would push
    the output further past that limit is discarded (conditional integration).
    """

    def __init__(self, params: PlantParams, pi_period: float | None = None):
        self.params = params
        self.pi_period = params.dt if pi_period is None else float(pi_period)
        self.reset()

    def reset(self):
        self.hstate = HysteresisState.closed(self.params.n)
        self.pistate = PIState()
        self.u_pi = 0.0
        self._u_c = np.zeros(self.params.n_c, dtype=np.int8)
        self._next_pi = 0.0

    def valves(self, T_air) -> np.ndarray:
        u, self.hstate = hysteresis_valve_law(T_air, self.hstate, self.params)
        return u

    def compressors(self, P_suc: float) -> np.ndarray:
        p = self.params
        e = -pi_error(P_suc, p)
        out, cand = pi_output(e, self.pistate, self.pi_period, p)
        held_out = p.K_P * e + self.pistate.integral / p.K_I
        n_on = self.pistate.n_on
        pushes_low = n_on == 0 and out < 0 and out < held_out
        pushes_high = n_on == p.n_c and out > p.n_c and out > held_out
        if pushes_low or pushes_high:
            out, cand = held_out, self.pistate
        bits = compressor_thresholding(out, p)
        self.u_pi = out
        self.pistate = PIState(cand.integral, int(bits.sum()))
        self._u_c = bits
        return bits

    def __call__(self, t: float, state: PlantState) -> ControlInput:
        u = self.valves(state.T_air)
        if t + 1e-9 >= self._next_pi:
            self.compressors(state.P_suc)
            self._next_pi += self.pi_period
        return ControlInput(u, self._u_c.copy())
