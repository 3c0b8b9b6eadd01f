"""Bilevel valve selection: inner overshoot minimisation, outer valve-count minimisation.

Every period the controller predicts the air temperatures over one control
period with the frozen-evaporator linear model and picks the valves to open.
The objective is the integrated squared overshoot above ``T_max``

    J(alpha) = sum_i  integral (T_air,i - T_max,i)_+^2 dt

evaluated with RK4 steps and the trapezoidal rule on ``n_samples`` points,
and ``V(alpha) = J(0) - J(alpha)`` is the reduction achieved by opening the
valves in ``alpha``.

Two evaluation paths exist.  ``InnerProblem.objective`` integrates the model
directly for each candidate and is the reference.  Solvers use
``InnerProblem.objective_fast``, which adds precomputed per-valve responses to
the nominal trajectory; the RK4 map is affine in the input, so both agree to
rounding.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from refrigctl.plant import ControlInput, LinearModel, PlantState, build_linear_model
from refrigctl.thermo import R134A, PlantParams, RefrigerantModel, Topology

DEFAULT_DELTA = 0.5      # degC^2 s
DEFAULT_SAMPLES = 61


def quadratic_violation(T_air: np.ndarray, T_max: np.ndarray, h: float) -> np.ndarray:
    """Trapezoidal integral of sum_i (T_air,i - T_max,i)_+^2 along axis -2.

    ``T_air`` has shape (..., n_samples, n); returns shape (...).
    """
    over = np.maximum(T_air - T_max, 0.0)
    g = np.sum(over * over, axis=-1)
    return h * (g.sum(axis=-1) - 0.5 * (g[..., 0] + g[..., -1]))


@dataclass(eq=False)
class InnerProblem:
    """One control period's valve-selection problem."""

    model: LinearModel
    x_meas: np.ndarray
    T_max: np.ndarray
    horizon: float
    n_samples: int = DEFAULT_SAMPLES
    delta: float = DEFAULT_DELTA
    budget: int | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        n = self.model.n
        self.x_meas = np.asarray(self.x_meas, dtype=float)
        self.T_max = np.broadcast_to(np.asarray(self.T_max, dtype=float), (n,)).copy()
        if self.x_meas.shape != (2 * n,):
            raise ValueError(f"x_meas must have length {2 * n}")
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not self.delta >= 0:
            raise ValueError("delta must be nonnegative")
        if self.budget is None:
            self.budget = n
        if not 0 <= self.budget <= n:
            raise ValueError(f"budget must lie in [0, {n}]")

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def h(self) -> float:
        return self.horizon / (self.n_samples - 1)

    def _maps(self):
        if "maps" not in self._cache:
            self._cache["maps"] = self.model.discretize(self.h)
        return self._cache["maps"]

    # -- reference path ----------------------------------------------------
    def trajectories(self, alphas) -> np.ndarray:
        return self.model.simulate(self.x_meas, alphas, self.horizon, self.n_samples)

    def objective(self, alphas) -> np.ndarray:
        """J for a batch of inputs (m, n) by direct simulation."""
        x = self.trajectories(alphas)
        return quadratic_violation(x[..., self.n:], self.T_max, self.h)

    # -- fast path ---------------------------------------------------------
    def nominal(self) -> np.ndarray:
        """Full-state trajectory with every valve closed, (n_samples, 2n)."""
        if "nominal" not in self._cache:
            self._cache["nominal"] = self.trajectories(np.zeros(self.n))[0]
        return self._cache["nominal"]

    def air_response(self) -> np.ndarray:
        """Air-temperature response to each valve, (n_samples, n_air, n_valves)."""
        if "response" not in self._cache:
            M, G = self._maps()
            n = self.n
            GB = G @ self.model.B
            S = np.zeros((self.n_samples, 2 * n, n))
            for k in range(1, self.n_samples):
                S[k] = M @ S[k - 1] + GB
            self._cache["response"] = np.ascontiguousarray(S[:, n:, :])
        return self._cache["response"]

    def air_column(self, i: int) -> np.ndarray:
        """Air response to valve ``i`` alone, (n_samples, n); computed lazily."""
        if "response" in self._cache:
            return self._cache["response"][:, :, i]
        cols = self._cache.setdefault("columns", {})
        if i not in cols:
            M, G = self._maps()
            gb = G @ self.model.B[:, i]
            s = np.zeros(2 * self.n)
            out = np.zeros((self.n_samples, self.n))
            for k in range(1, self.n_samples):
                s = M @ s + gb
                out[k] = s[self.n:]
            cols[i] = out
        return cols[i]

    def objective_fast(self, alphas) -> np.ndarray:
        alphas = np.atleast_2d(np.asarray(alphas, dtype=float))
        base = self.nominal()[:, self.n:]
        T = base[None] + np.einsum("kij,mj->mki", self.air_response(), alphas)
        return quadratic_violation(T, self.T_max, self.h)

    def violation_of(self, T_air: np.ndarray) -> float:
        return float(quadratic_violation(T_air, self.T_max, self.h))

    @property
    def J0(self) -> float:
        if "J0" not in self._cache:
            self._cache["J0"] = self.violation_of(self.nominal()[:, self.n:])
        return self._cache["J0"]


@dataclass
class ValveSolution:
    alpha: np.ndarray
    objective: float          # J(alpha)
    value: float              # V(alpha) = J(0) - J(alpha)
    budget: int               # number of open valves
    rho: float | None = None  # a-posteriori ratio (linear surrogate only)
    feasible: bool = True     # False: J > delta with the selection exhausted
    evaluations: int = 0

    @property
    def open_set(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.alpha))


def make_problem(state: PlantState | np.ndarray, params: PlantParams, topology: Topology,
                 delta: float = DEFAULT_DELTA, n_samples: int = DEFAULT_SAMPLES,
                 model: LinearModel | None = None,
                 refrigerant: RefrigerantModel = R134A) -> InnerProblem:
    """Inner problem for the measured state, evaporator frozen at the pressure reference."""
    if model is None:
        model = build_linear_model(params, topology, params.P_ref, refrigerant)
    x = state.thermal if isinstance(state, PlantState) else np.asarray(state, dtype=float)
    return InnerProblem(model, x, params.vec("T_max"), params.dt, n_samples, delta)


def inner_objective(problem: InnerProblem, alpha) -> float:
    return float(problem.objective(alpha)[0])


def value(problem: InnerProblem, alpha) -> float:
    alpha = np.asarray(alpha, dtype=float)
    if not np.any(alpha):
        return 0.0
    J = problem.objective(np.vstack([np.zeros_like(alpha), alpha]))
    return float(J[0] - J[1])


# ---------------------------------------------------------------------------
# Marginal gains DV(0)
# ---------------------------------------------------------------------------

def marginal_gains_adjoint(problem: InnerProblem) -> np.ndarray:
    """Gradient of V at the all-closed input from one forward and one backward pass.

    This is the exact adjoint of the discrete objective: with
    ``x[k+1] = M x[k] + G (B a + C)`` and trapezoid weights ``w``, the costate
    obeys ``lam[k] = w[k] grad g(x[k]) + M^T lam[k+1]`` and
    ``dJ/da = (G B)^T sum_{k>=1} lam[k]``.
    """
    n, N, h = problem.n, problem.n_samples, problem.h
    M, G = problem._maps()
    x = problem.nominal()
    w = np.full(N, h)
    w[0] = w[-1] = 0.5 * h
    lam = np.zeros(2 * n)
    acc = np.zeros(2 * n)
    for k in range(N - 1, 0, -1):
        grad = np.zeros(2 * n)
        grad[n:] = 2.0 * np.maximum(x[k, n:] - problem.T_max, 0.0)
        lam = w[k] * grad + M.T @ lam
        acc += lam
    dJ = (G @ problem.model.B).T @ acc
    return -dJ


def marginal_gains_fd(problem: InnerProblem, eps: float = 1e-4,
                      scheme: str = "forward") -> np.ndarray:
    """Finite-difference gains from relaxed single-valve inputs (reference path)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    n = problem.n
    eye = np.eye(n)
    if scheme == "forward":
        J = problem.objective(np.vstack([np.zeros(n), eps * eye]))
        return (J[0] - J[1:]) / eps
    if scheme == "central":
        J = problem.objective(np.vstack([eps * eye, -eps * eye]))
        return (J[n:] - J[:n]) / (2 * eps)
    raise ValueError(f"unknown scheme {scheme!r}")


def descending_order(gains: np.ndarray) -> np.ndarray:
    """Valve indices by decreasing gain; ties go to the lower index."""
    return np.argsort(-np.asarray(gains), kind="stable")


def _rho(v: float, gains: np.ndarray, alpha: np.ndarray) -> float | None:
    denom = float(gains @ alpha)
    return v / denom if denom != 0 else None


# ---------------------------------------------------------------------------
# Inner problem
# ---------------------------------------------------------------------------

def solve_inner_linear(problem: InnerProblem, K: int, gains: np.ndarray | None = None) -> ValveSolution:
    """Open the K valves with the largest positive first-order gain."""
    n = problem.n
    if not 0 <= K <= n:
        raise ValueError(f"K must lie in [0, {n}]")
    if gains is None:
        gains = marginal_gains_adjoint(problem)
    alpha = np.zeros(n, dtype=np.int8)
    for i in descending_order(gains):
        if gains[i] <= 0 or alpha.sum() >= K:
            break
        alpha[i] = 1
    J = float(problem.objective_fast(alpha)[0])
    v = problem.J0 - J
    return ValveSolution(alpha, J, v, int(alpha.sum()), _rho(v, gains, alpha), True, 1)


def _greedy_pick(problem: InnerProblem, T_cur: np.ndarray, chosen: np.ndarray):
    """Best single addition to ``chosen``; returns (index, J) or (None, inf)."""
    cand = np.flatnonzero(chosen == 0)
    if cand.size == 0:
        return None, math.inf
    S = problem.air_response()
    T = T_cur[None] + np.moveaxis(S[:, :, cand], 2, 0)
    J = quadratic_violation(T, problem.T_max, problem.h)
    j = int(np.argmin(J))
    return int(cand[j]), float(J[j])


def solve_inner_greedy(problem: InnerProblem, K: int) -> ValveSolution:
    """Add, K times, the valve giving the largest value; stop without strict gain."""
    n = problem.n
    if not 0 <= K <= n:
        raise ValueError(f"K must lie in [0, {n}]")
    alpha = np.zeros(n, dtype=np.int8)
    T_cur = problem.nominal()[:, n:].copy()
    J_cur = problem.J0
    evals = 1
    for _ in range(K):
        i, J_new = _greedy_pick(problem, T_cur, alpha)
        evals += n - int(alpha.sum())
        if i is None or not J_new < J_cur:
            break
        alpha[i] = 1
        T_cur += problem.air_column(i)
        J_cur = J_new
    return ValveSolution(alpha, J_cur, problem.J0 - J_cur, int(alpha.sum()), None, True, evals)


# ---------------------------------------------------------------------------
# Bilevel problem: fewest valves with J <= delta
# ---------------------------------------------------------------------------

def solve_bilevel_linear(problem: InnerProblem, max_valves: int | None = None,
                         gains: np.ndarray | None = None) -> ValveSolution:
    """Open valves in descending-gain order until J <= delta or gains run out."""
    n = problem.n
    cap = n if max_valves is None else max_valves
    if gains is None:
        gains = marginal_gains_adjoint(problem)
    alpha = np.zeros(n, dtype=np.int8)
    T_cur = problem.nominal()[:, n:].copy()
    J_cur = problem.J0
    evals = 1
    for i in descending_order(gains):
        if not (gains[i] > 0 and J_cur > problem.delta and alpha.sum() < cap):
            break
        alpha[i] = 1
        T_cur += problem.air_column(i)
        J_cur = problem.violation_of(T_cur)
        evals += 1
    v = problem.J0 - J_cur
    return ValveSolution(alpha, J_cur, v, int(alpha.sum()), _rho(v, gains, alpha),
                         J_cur <= problem.delta, evals)


def solve_bilevel_greedy(problem: InnerProblem, max_valves: int | None = None) -> ValveSolution:
    """Greedy additions while J > delta; flags infeasibility when it stalls."""
    n = problem.n
    cap = n if max_valves is None else max_valves
    alpha = np.zeros(n, dtype=np.int8)
    T_cur = problem.nominal()[:, n:].copy()
    J_cur = problem.J0
    evals = 1
    while J_cur > problem.delta and alpha.sum() < cap:
        i, J_new = _greedy_pick(problem, T_cur, alpha)
        evals += n - int(alpha.sum())
        if i is None or not J_new < J_cur:
            break
        alpha[i] = 1
        T_cur += problem.air_column(i)
        J_cur = J_new
    return ValveSolution(alpha, J_cur, problem.J0 - J_cur, int(alpha.sum()), None,
                         J_cur <= problem.delta, evals)


# ---------------------------------------------------------------------------
# Compressors and the closed-loop step
# ---------------------------------------------------------------------------

def required_compressors(P_suc: float, n_open: int, params: PlantParams,
                         refrigerant: RefrigerantModel = R134A) -> float:
    """Fractional compressor count that balances the valve inflow at ``P_suc``."""
    return n_open * params.m_ref_max / (refrigerant.suction_density(P_suc) * params.k_c * params.dt)


def conservative_compressor_action(P_suc: float, n_open: int, params: PlantParams,
                                   refrigerant: RefrigerantModel = R134A) -> np.ndarray:
    """Balance suction inflow and outflow; round down below the reference, up otherwise."""
    req = required_compressors(P_suc, n_open, params, refrigerant)
    count = math.floor(req) if P_suc < params.P_ref else math.ceil(req)
    count = min(max(count, 0), params.n_c)
    bits = np.zeros(params.n_c, dtype=np.int8)
    bits[:count] = 1
    return bits


VARIANTS = ("linear", "greedy", "oracle")


def solve_bilevel(problem: InnerProblem, variant: str, max_valves: int | None = None) -> ValveSolution:
    if variant == "linear":
        return solve_bilevel_linear(problem, max_valves)
    if variant == "greedy":
        return solve_bilevel_greedy(problem, max_valves)
    if variant == "oracle":
        from refrigctl.oracle import exhaustive_bilevel
        return exhaustive_bilevel(problem, max_valves)
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def control_step(measured: PlantState, params: PlantParams, topology: Topology,
                 delta: float = DEFAULT_DELTA, variant: str = "linear",
                 n_samples: int = DEFAULT_SAMPLES, max_valves: int | None = None,
                 model: LinearModel | None = None) -> ControlInput:
    problem = make_problem(measured, params, topology, delta, n_samples, model)
    sol = solve_bilevel(problem, variant, max_valves)
    return ControlInput(sol.alpha, conservative_compressor_action(measured.P_suc, sol.budget, params))


@dataclass
class StepRecord:
    time_s: float
    K: int
    J: float
    V: float
    rho: float | None
    feasible: bool


class OptimizingController:
    """Stateful wrapper: caches the linear model and logs per-step diagnostics."""

    def __init__(self, params: PlantParams, topology: Topology, variant: str = "linear",
                 delta: float = DEFAULT_DELTA, n_samples: int = DEFAULT_SAMPLES,
                 refrigerant: RefrigerantModel = R134A):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.params = params
        self.topology = topology
        self.variant = variant
        self.delta = delta
        self.n_samples = n_samples
        self.refrigerant = refrigerant
        self.model = build_linear_model(params, topology, params.P_ref, refrigerant)
        self.log: list[StepRecord] = []

    def decide(self, t: float, state: PlantState, max_valves: int | None = None):
        problem = make_problem(state, self.params, self.topology, self.delta,
                               self.n_samples, self.model)
        sol = solve_bilevel(problem, self.variant, max_valves)
        self.log.append(StepRecord(t, sol.budget, sol.objective, sol.value, sol.rho, sol.feasible))
        bits = conservative_compressor_action(state.P_suc, sol.budget, self.params, self.refrigerant)
        return ControlInput(sol.alpha, bits), sol

    def __call__(self, t: float, state: PlantState, max_valves: int | None = None) -> ControlInput:
        return self.decide(t, state, max_valves)[0]

    def write_log(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", "K", "J", "V", "rho"])
            for r in self.log:
                w.writerow([repr(r.time_s), r.K, repr(r.J), repr(r.V),
                            "" if r.rho is None else repr(r.rho)])
        return path
