"""Switched, interconnected display-case dynamics.

State layout used throughout: ``x = (T_food[0..n), T_air[0..n), P_suc)``.
The controllers' prediction model drops the pressure and works with the
first ``2n`` entries only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from refrigctl.thermo import R134A, DomainError, PlantParams, RefrigerantModel, Topology


class IntegrationError(RuntimeError):
    """The simulated state left the physically valid region."""

    def __init__(self, message: str, variable: str, time: float | None = None):
        self.variable = variable
        self.time = time
        where = f" at t={time:g} s" if time is not None else ""
        super().__init__(f"{message}{where} (offending variable: {variable})")


@dataclass
class PlantState:
    T_food: np.ndarray   # degC, length n
    T_air: np.ndarray    # degC, length n
    P_suc: float         # bar

    def __post_init__(self):
        self.T_food = np.asarray(self.T_food, dtype=float)
        self.T_air = np.asarray(self.T_air, dtype=float)
        self.P_suc = float(self.P_suc)
        if self.T_food.shape != self.T_air.shape or self.T_food.ndim != 1:
            raise ValueError("T_food and T_air must be vectors of equal length")
        if not (np.all(np.isfinite(self.T_food)) and np.all(np.isfinite(self.T_air))):
            raise ValueError("temperatures must be finite")
        if not (math.isfinite(self.P_suc) and self.P_suc > 0):
            raise ValueError(f"P_suc must be finite and positive, got {self.P_suc!r}")

    @property
    def n(self) -> int:
        return self.T_food.size

    @classmethod
    def uniform(cls, n: int, temperature: float = 3.0, pressure: float = 1.4) -> "PlantState":
        return cls(np.full(n, temperature), np.full(n, temperature), pressure)

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "PlantState":
        n = (len(x) - 1) // 2
        return cls(x[:n].copy(), x[n:2 * n].copy(), x[2 * n])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.T_food, self.T_air, [self.P_suc]])

    @property
    def thermal(self) -> np.ndarray:
        """(T_food, T_air): the state seen by the prediction model."""
        return np.concatenate([self.T_food, self.T_air])


@dataclass
class ControlInput:
    u: np.ndarray    # valve bits, length n
    u_c: np.ndarray  # compressor bits, length n_c

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.int8)
        self.u_c = np.asarray(self.u_c, dtype=np.int8)
        for name, bits in (("u", self.u), ("u_c", self.u_c)):
            if bits.ndim != 1 or not np.all((bits == 0) | (bits == 1)):
                raise ValueError(f"{name} must be a binary vector")

    @classmethod
    def closed(cls, n: int, n_c: int) -> "ControlInput":
        return cls(np.zeros(n), np.zeros(n_c))

    @classmethod
    def from_counts(cls, valves, n_on: int, n_c: int) -> "ControlInput":
        """Valve bits plus the first ``n_on`` compressors switched ON."""
        uc = np.zeros(n_c, dtype=np.int8)
        uc[:n_on] = 1
        return cls(valves, uc)

    @property
    def n_open(self) -> int:
        return int(self.u.sum())

    @property
    def n_on(self) -> int:
        return int(self.u_c.sum())


# ---------------------------------------------------------------------------
# Right-hand sides (per-case forms, mainly for checking and documentation)
# ---------------------------------------------------------------------------

def food_temp_derivative(state: PlantState, params: PlantParams, i: int) -> float:
    """Rate of change of the food temperature in case ``i`` [K/s]."""
    return (-params.k_food_air * (state.T_food[i] - state.T_air[i])
            / (params.m_food[i] * params.c_food[i]))


def air_temp_derivative(state: PlantState, u, params: PlantParams, topology: Topology,
                        T_evap: float, i: int) -> float:
    """Rate of change of the air temperature in case ``i`` [K/s].

    ``T_evap`` is normally the evaporation temperature at the current
    suction pressure.
    """
    Ta = state.T_air
    k = topology.k[i]
    neighbours = sum(k[j] * (Ta[j] - Ta[i]) for j in range(len(Ta)))
    q = (params.k_food_air * (state.T_food[i] - Ta[i])
         + params.k_amb_air * (params.T_amb - Ta[i])
         - params.k_air_evap * (Ta[i] - T_evap * u[i])
         + neighbours)
    return q / (params.m_air[i] * params.c_air[i])


def valve_mass_flow(u_i, params: PlantParams) -> float:
    """Refrigerant mass flow out of one evaporator [kg/s]."""
    return u_i * params.m_ref_max / params.dt


def compressor_volume_flow(u_ci, params: PlantParams) -> float:
    """Volume flow drawn by one compressor [m^3/s]."""
    return u_ci * params.k_c


def suction_pressure_derivative(state: PlantState, u, u_c, params: PlantParams,
                                refrigerant: RefrigerantModel = R134A) -> float:
    """Rate of change of the suction manifold pressure [bar/s]."""
    p = state.P_suc
    inflow = float(np.sum(u)) * params.m_ref_max / params.dt
    outflow = refrigerant.suction_density(p) * float(np.sum(u_c)) * params.k_c
    return (inflow - outflow) / (params.V_suc * refrigerant.density_pressure_gradient(p))


def total_power(state: PlantState, u_c, params: PlantParams,
                refrigerant: RefrigerantModel = R134A) -> float:
    """Electrical power drawn by the compressor rack [W]."""
    return refrigerant.compressor_specific_power(state.P_suc) * float(np.sum(u_c)) * params.k_c


# ---------------------------------------------------------------------------
# Vectorised plant
# ---------------------------------------------------------------------------

class Plant:
    """Vectorised right-hand side and RK4 stepper for one refrigerator.

    ``hold_pressure`` pins P_suc (ideal suction regulation); ``evap_sign``
    exists only so tests can inject a sign fault into the evaporator term.
    """

    def __init__(self, params: PlantParams, topology: Topology,
                 refrigerant: RefrigerantModel = R134A, *,
                 hold_pressure: bool = False, evap_sign: float = 1.0):
        if topology.n != params.n:
            raise ValueError(f"topology has {topology.n} cases, params have {params.n}")
        self.params = params
        self.topology = topology
        self.refrigerant = refrigerant
        self.hold_pressure = hold_pressure
        self.evap_sign = evap_sign
        self.n = params.n
        k = topology.matrix
        self._lap = k - np.diag(k.sum(axis=1))
        self._food_gain = params.k_food_air / (params.vec("m_food") * params.vec("c_food"))
        self._air_cap = params.vec("m_air") * params.vec("c_air")
        self._inflow_per_valve = params.m_ref_max / params.dt
        self._kc = params.k_c

    def derivatives(self, x: np.ndarray, u: np.ndarray, n_on: float) -> np.ndarray:
        n, p = self.n, self.params
        Tf, Ta, P = x[:n], x[n:2 * n], x[2 * n]
        ref = self.refrigerant
        T_evap = ref.evaporation_temperature(P)
        dx = np.empty_like(x)
        dx[:n] = -self._food_gain * (Tf - Ta)
        dx[n:2 * n] = (p.k_food_air * (Tf - Ta) + p.k_amb_air * (p.T_amb - Ta)
                       - p.k_air_evap * (Ta - self.evap_sign * T_evap * u)
                       + self._lap @ Ta) / self._air_cap
        if self.hold_pressure:
            dx[2 * n] = 0.0
        else:
            inflow = self._inflow_per_valve * float(u.sum())
            outflow = ref.suction_density(P) * n_on * self._kc
            dx[2 * n] = (inflow - outflow) / (p.V_suc * ref.density_pressure_gradient(P))
        return dx

    def power(self, P: float, n_on: float) -> float:
        return self.refrigerant.compressor_specific_power(P) * n_on * self._kc

    def step(self, x: np.ndarray, u: np.ndarray, n_on: float, h: float,
             t: float | None = None) -> np.ndarray:
        """One classical RK4 step with the input held constant."""
        if not h > 0:
            raise ValueError("step size must be positive")
        u = np.asarray(u, dtype=float)
        f = self.derivatives
        try:
            k1 = f(x, u, n_on)
            k2 = f(x + 0.5 * h * k1, u, n_on)
            k3 = f(x + 0.5 * h * k2, u, n_on)
            k4 = f(x + h * k3, u, n_on)
        except DomainError as exc:
            raise IntegrationError(str(exc), "P_suc", t) from exc
        x_new = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        self._check(x_new, t)
        return x_new

    def _check(self, x: np.ndarray, t):
        n = self.n
        if not np.all(np.isfinite(x)):
            bad = int(np.flatnonzero(~np.isfinite(x))[0])
            raise IntegrationError("non-finite state", _state_label(bad, n), t)
        if x[2 * n] <= 0:
            raise IntegrationError("suction pressure dropped to zero or below", "P_suc", t)


def _state_label(idx: int, n: int) -> str:
    if idx < n:
        return f"T_food[{idx}]"
    if idx < 2 * n:
        return f"T_air[{idx - n}]"
    return "P_suc"


def step(state: PlantState, control: ControlInput, h: float, params: PlantParams,
         topology: Topology, refrigerant: RefrigerantModel = R134A) -> PlantState:
    plant = Plant(params, topology, refrigerant)
    x = plant.step(state.to_vector(), control.u, control.n_on, h)
    return PlantState.from_vector(x)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Sampled closed- or open-loop run.

    ``valves``/``compressors``/``power`` hold the input applied over, and the
    power drawn at the start of, each integrator step, so they are one
    shorter than ``times``/``states``.
    """

    times: np.ndarray          # (N+1,)
    states: np.ndarray         # (N+1, 2n+1)
    valves: np.ndarray         # (N, n) int8
    compressors: np.ndarray    # (N, n_c) int8
    power: np.ndarray          # (N,) W
    control_period: float = 60.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        N = len(self.times) - 1
        if self.states.shape[0] != N + 1:
            raise ValueError("states and time grid differ in length")
        if not (len(self.valves) == len(self.compressors) == len(self.power) == N):
            raise ValueError("controls and power must be one shorter than the time grid")
        if N > 0 and np.any(np.diff(self.times) <= 0):
            raise ValueError("time grid must be strictly increasing")

    @property
    def n(self) -> int:
        return (self.states.shape[1] - 1) // 2

    @property
    def n_c(self) -> int:
        return self.compressors.shape[1]

    @property
    def T_food(self) -> np.ndarray:
        return self.states[:, :self.n]

    @property
    def T_air(self) -> np.ndarray:
        return self.states[:, self.n:2 * self.n]

    @property
    def P_suc(self) -> np.ndarray:
        return self.states[:, 2 * self.n]

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def step_sizes(self) -> np.ndarray:
        return np.diff(self.times)

    def energy(self) -> float:
        """Electrical energy over the run [J]."""
        return float(np.sum(self.power * self.step_sizes))

    def state_at(self, k: int) -> PlantState:
        return PlantState.from_vector(self.states[k])

    def header(self) -> list[str]:
        n, nc = self.n, self.n_c
        return (["time_s"] + [f"Tfood_{i + 1}" for i in range(n)]
                + [f"Tair_{i + 1}" for i in range(n)] + ["Psuc_bar"]
                + [f"u_{i + 1}" for i in range(n)] + [f"uc_{i + 1}" for i in range(nc)]
                + ["power_W"])

    def to_csv(self, path, every_step: bool = False) -> Path:
        """Write one row per control-period boundary, or per integrator step.

        The final sample has no applied input, so its control and power
        fields are left empty.
        """
        path = Path(path)
        N = len(self.times) - 1
        if every_step:
            rows = range(N + 1)
        else:
            rel = self.times - self.times[0]
            ratio = rel / self.control_period
            rows = [k for k in range(N + 1) if abs(ratio[k] - round(ratio[k])) < 1e-9]
            if rows[-1] != N:
                rows.append(N)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for k in rows:
                row = [repr(float(self.times[k]))] + [repr(float(v)) for v in self.states[k]]
                if k < N:
                    row += [str(int(b)) for b in self.valves[k]]
                    row += [str(int(b)) for b in self.compressors[k]]
                    row.append(repr(float(self.power[k])))
                else:
                    row += [""] * (self.n + self.n_c + 1)
                w.writerow(row)
        return path

    @classmethod
    def from_csv(cls, path, control_period: float = 60.0) -> "Trajectory":
        with Path(path).open(newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            rows = list(r)
        n = sum(1 for h in header if h.startswith("Tfood_"))
        nc = sum(1 for h in header if h.startswith("uc_"))
        times = np.array([float(row[0]) for row in rows])
        states = np.array([[float(v) for v in row[1:2 * n + 2]] for row in rows])
        ctl = rows[:-1]
        off = 2 * n + 2
        valves = np.array([[int(v) for v in row[off:off + n]] for row in ctl], dtype=np.int8)
        comps = np.array([[int(v) for v in row[off + n:off + n + nc]] for row in ctl], dtype=np.int8)
        power = np.array([float(row[off + n + nc]) for row in ctl])
        return cls(times, states, valves.reshape(len(ctl), n), comps.reshape(len(ctl), nc),
                   power, control_period)


def simulate(state: PlantState, schedule, horizon: float, params: PlantParams,
             topology: Topology, h: float = 1.0, period: float | None = None,
             refrigerant: RefrigerantModel = R134A, hold_pressure: bool = False) -> Trajectory:
    """Open-loop simulation under a piecewise-constant schedule.

    ``schedule`` is either a single ``ControlInput`` held throughout, or a
    sequence of inputs each held for ``period`` seconds (default: the
    control period ``params.dt``).
    """
    period = params.dt if period is None else period
    if isinstance(schedule, ControlInput):
        schedule = [schedule]
        period = math.inf
    schedule = list(schedule)
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    if math.isfinite(period) and len(schedule) * period < horizon - 1e-9:
        raise ValueError("schedule does not cover the horizon")
    plant = Plant(params, topology, refrigerant, hold_pressure=hold_pressure)
    n_steps = int(round(horizon / h))
    if abs(n_steps * h - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError("horizon must be a multiple of the step size")
    x = state.to_vector()
    states = np.empty((n_steps + 1, x.size))
    states[0] = x
    valves = np.empty((n_steps, params.n), dtype=np.int8)
    comps = np.empty((n_steps, params.n_c), dtype=np.int8)
    power = np.empty(n_steps)
    for k in range(n_steps):
        t = k * h
        idx = 0 if not math.isfinite(period) else min(int((t + 1e-9) // period), len(schedule) - 1)
        c = schedule[idx]
        valves[k], comps[k] = c.u, c.u_c
        power[k] = plant.power(x[2 * params.n], c.n_on)
        x = plant.step(x, c.u, c.n_on, h, t)
        states[k + 1] = x
    times = np.arange(n_steps + 1) * h
    ctl_period = params.dt if not math.isfinite(period) else period
    return Trajectory(times, states, valves, comps, power, ctl_period)


# ---------------------------------------------------------------------------
# Prediction model
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LinearModel:
    """Affine thermal model x' = A x + B u + C with the evaporator frozen."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    T_evap_frozen: float
    _maps: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.B.shape[1]

    def discretize(self, h: float) -> tuple[np.ndarray, np.ndarray]:
        """Exact RK4 map for constant input: x+ = M x + G (B u + C). Cached per ``h``."""
        if h not in self._maps:
            self._maps[h] = self._rk4_maps(h)
        return self._maps[h]

    def _rk4_maps(self, h: float):
        hA = h * self.A
        eye = np.eye(self.A.shape[0])
        hA2 = hA @ hA
        hA3 = hA2 @ hA
        M = eye + hA + hA2 / 2 + hA3 / 6 + hA3 @ hA / 24
        G = h * (eye + hA / 2 + hA2 / 6 + hA3 / 24)
        return M, G

    def simulate(self, x0: np.ndarray, alphas: np.ndarray, horizon: float,
                 n_samples: int) -> np.ndarray:
        """Trajectories for a batch of constant inputs by direct time stepping.

        ``alphas`` has shape (m, n) (or (n,)); returns (m, n_samples, 2n).
        """
        alphas = np.atleast_2d(np.asarray(alphas, dtype=float))
        h = horizon / (n_samples - 1)
        M, G = self.discretize(h)
        drive = (alphas @ self.B.T + self.C) @ G.T
        out = np.empty((alphas.shape[0], n_samples, self.A.shape[0]))
        x = np.broadcast_to(np.asarray(x0, dtype=float), out[:, 0].shape).copy()
        out[:, 0] = x
        for k in range(1, n_samples):
            x = x @ M.T + drive
            out[:, k] = x
        return out


def build_linear_model(params: PlantParams, topology: Topology, P_freeze: float,
                       refrigerant: RefrigerantModel = R134A) -> LinearModel:
    """Assemble (A, B, C) from the food/air balances with T_evap(P_freeze)."""
    n = params.n
    T_evap = float(refrigerant.evaporation_temperature(P_freeze))
    food_gain = params.k_food_air / (params.vec("m_food") * params.vec("c_food"))
    air_cap = params.vec("m_air") * params.vec("c_air")
    k = topology.matrix
    lap = k - np.diag(k.sum(axis=1))

    A = np.zeros((2 * n, 2 * n))
    idx = np.arange(n)
    A[idx, idx] = -food_gain
    A[idx, n + idx] = food_gain
    A[n + idx, idx] = params.k_food_air / air_cap
    air_block = lap.copy()
    air_block[idx, idx] -= params.k_food_air + params.k_amb_air + params.k_air_evap
    A[n:, n:] = air_block / air_cap[:, None]

    B = np.zeros((2 * n, n))
    B[n + idx, idx] = params.k_air_evap * T_evap / air_cap

    C = np.zeros(2 * n)
    C[n:] = params.k_amb_air * params.T_amb / air_cap
    return LinearModel(A, B, C, T_evap)
