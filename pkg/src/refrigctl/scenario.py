"""Closed-loop experiments: plant plus controller over hours, with metrics and pricing."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from refrigctl.baseline import BaselineController
from refrigctl.optctl import DEFAULT_DELTA, DEFAULT_SAMPLES, OptimizingController
from refrigctl.plant import Plant, PlantState, Trajectory
from refrigctl.thermo import ConfigError, PlantParams, Topology, default_params

CONTROLLERS = ("pi", "linear", "greedy", "oracle")
DEFAULT_SEED = 2013


class PriceError(ValueError):
    """Malformed or inconsistent price data; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class PriceSeries:
    """Step-wise constant electricity price; each value holds until the next time."""

    times: tuple[float, ...]     # s
    prices: tuple[float, ...]    # $/kWh

    def __post_init__(self):
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        object.__setattr__(self, "prices", tuple(float(p) for p in self.prices))
        if not self.times:
            raise PriceError("price series is empty")
        if len(self.times) != len(self.prices):
            raise PriceError("times and prices differ in length")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise PriceError("times must be strictly increasing")
        if any(not math.isfinite(p) or p < 0 for p in self.prices):
            raise PriceError("prices must be finite and nonnegative")

    def price_at(self, t: float) -> float:
        """Price in force at ``t``; the first value also covers earlier times."""
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.prices[max(i, 0)]

    def covers(self, start: float) -> bool:
        return self.times[0] <= start

    @classmethod
    def constant(cls, price: float) -> "PriceSeries":
        return cls((0.0,), (price,))

    @classmethod
    def from_csv(cls, path) -> "PriceSeries":
        times, prices = [], []
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["time_s", "price_usd_per_kwh"]:
                raise PriceError("expected header 'time_s,price_usd_per_kwh'", 1)
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != 2:
                    raise PriceError(f"expected 2 fields, got {len(row)}", lineno)
                try:
                    t, p = float(row[0]), float(row[1])
                except ValueError:
                    raise PriceError(f"non-numeric value in {row!r}", lineno) from None
                if not math.isfinite(t) or not math.isfinite(p) or p < 0:
                    raise PriceError(f"invalid time or price in {row!r}", lineno)
                if times and t <= times[-1]:
                    raise PriceError("times must be strictly increasing", lineno)
                times.append(t)
                prices.append(p)
        if not times:
            raise PriceError("price file has no rows")
        return cls(tuple(times), tuple(prices))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", "price_usd_per_kwh"])
            for t, p in zip(self.times, self.prices):
                w.writerow([repr(t), repr(p)])
        return path


def default_price_series(base: float = 0.04, spike: float = 0.25,
                         spikes=((14400.0, 18000.0), (21600.0, 25200.0))) -> PriceSeries:
    """Flat base price with two one-hour spikes inside the 8-h window."""
    times, prices = [0.0], [base]
    for a, b in spikes:
        times += [a, b]
        prices += [spike, base]
    return PriceSeries(tuple(times), tuple(prices))


@dataclass
class ScenarioConfig:
    duration_s: float = 28800.0
    controller: str = "pi"
    n: int = 10
    overrides: dict = field(default_factory=dict)
    seed: int = DEFAULT_SEED
    perturb: bool = True
    delta: float = DEFAULT_DELTA
    n_samples: int = DEFAULT_SAMPLES
    h: float = 1.0
    T0: float = 3.0                  # degC, initial food and air temperature
    P0: float = 1.4                  # bar
    prices: PriceSeries | None = None
    dr_enabled: bool = True
    dr_threshold: float = 0.1        # $/kWh
    dr_cap_fraction: float = 0.7
    params: PlantParams | None = None
    topology: Topology | None = None

    def __post_init__(self):
        problems = []
        if not self.duration_s > 0:
            problems.append("duration_s must be positive")
        if self.controller not in CONTROLLERS:
            problems.append(f"controller must be one of {CONTROLLERS}")
        if not 0 < self.dr_cap_fraction <= 1:
            problems.append("dr_cap_fraction must lie in (0, 1]")
        if not self.h > 0:
            problems.append("h must be positive")
        if problems:
            raise ConfigError(problems)

    def plant(self) -> tuple[PlantParams, Topology]:
        """Parameters with the seeded food-mass perturbation applied."""
        if self.params is not None:
            params = self.params
            topology = self.topology or Topology.chain(params.n)
        else:
            params, topology = default_params(self.n, **self.overrides)
            if self.topology is not None:
                topology = self.topology
        if self.perturb:
            params = replace(params, m_food=tuple(perturb_food_mass(params.vec("m_food"), self.seed)))
        return params, topology


def perturb_food_mass(nominal, seed: int = DEFAULT_SEED, n: int | None = None) -> np.ndarray:
    """Food masses drawn uniformly within +-20% of nominal."""
    nominal = np.asarray(nominal, dtype=float)
    size = nominal.shape if n is None else (n,)
    rng = np.random.default_rng(seed)
    return rng.uniform(0.8, 1.2, size) * np.broadcast_to(nominal, size)


def dr_cap_policy(price: float, n: int, threshold: float = 0.1, fraction: float = 0.7) -> int:
    """Valve ceiling: floor(fraction*n) when the price strictly exceeds the threshold."""
    return math.floor(fraction * n + 1e-9) if price > threshold else n


def count_switchings(trajectory: Trajectory) -> int:
    """Compressor bit flips between consecutive control periods, summed over compressors."""
    comps = trajectory.compressors
    if len(comps) < 2:
        return 0
    starts = trajectory.times[:-1]
    period = trajectory.control_period
    k = np.round(starts / period)
    at_boundary = np.isclose(starts, k * period, atol=1e-6)
    rows = comps[at_boundary].astype(np.int64)
    return int(np.abs(np.diff(rows, axis=0)).sum())


class EnergyCost(NamedTuple):
    cost_usd: float
    energy_kwh: float
    extrapolated: bool   # the series did not cover the start of the run


def energy_and_cost(trajectory: Trajectory, prices: PriceSeries) -> EnergyCost:
    if prices is None or not prices.times:
        raise PriceError("price series is empty")
    steps = trajectory.step_sizes
    joules = trajectory.power * steps
    starts = trajectory.times[:-1]
    idx = np.clip(np.searchsorted(prices.times, starts, side="right") - 1, 0, None)
    rate = np.asarray(prices.prices)[idx]
    cost = float(np.sum(joules * rate)) / 3.6e6
    return EnergyCost(cost, float(joules.sum()) / 3.6e6, not prices.covers(float(trajectory.times[0])))


@dataclass
class Metrics:
    avg_power_kw: float
    switchings: int
    violation_integral: float      # degC s, air above T_max
    max_excursion: float           # degC, food above T_max
    energy_cost_usd: float | None
    energy_kwh: float = 0.0
    max_air_excursion: float = 0.0  # degC, diagnostic
    max_valves_when_capped: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(trajectory: Trajectory, params: PlantParams,
                    prices: PriceSeries | None = None) -> Metrics:
    T_max = params.vec("T_max")
    over_air = np.maximum(trajectory.T_air - T_max, 0.0)
    viol = float(np.trapezoid(over_air.sum(axis=1), trajectory.times)) if len(trajectory.times) > 1 else 0.0
    food_exc = float(np.max(np.maximum(trajectory.T_food - T_max, 0.0)))
    air_exc = float(np.max(over_air))
    energy_j = trajectory.energy()
    avg_kw = energy_j / trajectory.duration / 1000.0
    cost = energy_and_cost(trajectory, prices).cost_usd if prices is not None else None
    return Metrics(avg_kw, count_switchings(trajectory), viol, food_exc, cost,
                   energy_j / 3.6e6, air_exc)


@dataclass
class RunResult:
    config: ScenarioConfig
    params: PlantParams
    trajectory: Trajectory
    metrics: Metrics
    decisions: list = field(default_factory=list)   # (time_s, K, cap, feasible)
    controller: object = None

    def metrics_record(self) -> dict:
        c = self.config
        return {"metrics": self.metrics.to_dict(),
                "config": {"controller": c.controller, "duration_s": c.duration_s, "n": self.params.n,
                           "delta": c.delta, "n_samples": c.n_samples, "h": c.h,
                           "dr_enabled": c.dr_enabled and c.prices is not None,
                           "dr_threshold": c.dr_threshold, "dr_cap_fraction": c.dr_cap_fraction},
                "seed": c.seed}


def run_closed_loop(config: ScenarioConfig) -> RunResult:
    """Simulate the plant under the selected controller for ``duration_s``."""
    params, topology = config.plant()
    n, h = params.n, config.h
    plant = Plant(params, topology)
    n_steps = int(round(config.duration_s / h))
    if abs(n_steps * h - config.duration_s) > 1e-9 * config.duration_s:
        raise ValueError("duration must be a multiple of the step size")
    per_period = params.dt / h
    if abs(per_period - round(per_period)) > 1e-9:
        raise ValueError("control period must be a multiple of the step size")
    per_period = int(round(per_period))

    if config.controller == "pi":
        ctl = BaselineController(params)
    else:
        ctl = OptimizingController(params, topology, config.controller, config.delta, config.n_samples)
    use_dr = config.prices is not None and config.dr_enabled and config.controller != "pi"

    x = PlantState.uniform(n, config.T0, config.P0).to_vector()
    states = np.empty((n_steps + 1, x.size))
    states[0] = x
    valves = np.empty((n_steps, n), dtype=np.int8)
    comps = np.empty((n_steps, params.n_c), dtype=np.int8)
    power = np.empty(n_steps)
    decisions = []
    control = None
    for k in range(n_steps):
        t = k * h
        if config.controller == "pi":
            control = ctl(t, PlantState.from_vector(x))
        elif k % per_period == 0:
            cap = None
            if use_dr:
                cap = dr_cap_policy(config.prices.price_at(t), n, config.dr_threshold,
                                    config.dr_cap_fraction)
            control, sol = ctl.decide(t, PlantState.from_vector(x), cap)
            decisions.append((t, sol.budget, cap, sol.feasible))
        valves[k], comps[k] = control.u, control.u_c
        n_on = control.n_on
        power[k] = plant.power(x[2 * n], n_on)
        x = plant.step(x, control.u, n_on, h, t)
        states[k + 1] = x

    traj = Trajectory(np.arange(n_steps + 1) * h, states, valves, comps, power, params.dt)
    metrics = compute_metrics(traj, params, config.prices)
    capped = [K for _, K, cap, _ in decisions if cap is not None and cap < n]
    metrics.max_valves_when_capped = max(capped) if capped else None
    return RunResult(config, params, traj, metrics, decisions, ctl)


def savings(reference: float, value: float) -> float:
    """Relative reduction in percent."""
    return 100.0 * (reference - value) / reference if reference else 0.0
