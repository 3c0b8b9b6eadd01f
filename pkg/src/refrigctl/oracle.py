"""Brute-force ground truth and property checkers for small instances.

Everything here evaluates candidates by direct simulation of the linear
model (``InnerProblem.objective``), never through the superposition path the
solvers use, so agreement between the two is a genuine cross-check.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from math import comb

import numpy as np

from refrigctl.optctl import (
    InnerProblem,
    ValveSolution,
    make_problem,
    marginal_gains_adjoint,
    marginal_gains_fd,
    solve_bilevel_greedy,
    solve_inner_greedy,
    solve_inner_linear,
)
from refrigctl.plant import Plant, Trajectory
from refrigctl.thermo import PlantParams, Topology, default_params

MAX_ENUMERATION_N = 20
MAX_TRIPLE_N = 6
_CHUNK = 4096


class OracleRefusal(ValueError):
    """Raised when an instance is too large to enumerate."""


@dataclass
class PropertyReport:
    name: str
    instances: int = 0
    violations: list[dict] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)
    checks: int = 0
    worst_margin: float | None = None

    @property
    def passed(self) -> bool:
        return not self.violations

    def note_margin(self, margin: float):
        if self.worst_margin is None or margin < self.worst_margin:
            self.worst_margin = float(margin)

    def merge(self, other: "PropertyReport") -> "PropertyReport":
        self.instances += other.instances
        self.checks += other.checks
        self.violations.extend(other.violations)
        self.seeds.extend(other.seeds)
        if other.worst_margin is not None:
            self.note_margin(other.worst_margin)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: {self.instances} instances, {self.checks} checks, "
                f"{len(self.violations)} violations")


# ---------------------------------------------------------------------------
# Enumeration
# ---------------------------------------------------------------------------

def _guard(n: int, limit: int = MAX_ENUMERATION_N):
    if n > limit:
        raise OracleRefusal(f"refusing to enumerate n={n} cases (limit {limit})")


def _subsets_of_size(n: int, k: int):
    """Indicator rows for all k-subsets, lexicographic in the index tuple."""
    for combo in itertools.combinations(range(n), k):
        a = np.zeros(n, dtype=np.int8)
        a[list(combo)] = 1
        yield a


def _best_of_size(problem: InnerProblem, k: int):
    """Smallest-J subset of size k, first in lexicographic order on ties."""
    best_J, best_a, count = math.inf, None, 0
    gen = _subsets_of_size(problem.n, k)
    while True:
        block = list(itertools.islice(gen, _CHUNK))
        if not block:
            break
        J = problem.objective(np.array(block))
        count += len(block)
        j = int(np.argmin(J))
        if J[j] < best_J:
            best_J, best_a = float(J[j]), block[j]
    return best_a, best_J, count


def exhaustive_inner(problem: InnerProblem, K: int) -> ValveSolution:
    """Maximise V over every input with at most K open valves.

    Candidates are visited by size, then lexicographically; the first
    maximiser in that order wins ties.
    """
    n = problem.n
    _guard(n)
    if not 0 <= K <= n:
        raise ValueError(f"K must lie in [0, {n}]")
    J0 = float(problem.objective(np.zeros(n))[0])
    best_a, best_J, evals = np.zeros(n, dtype=np.int8), J0, 1
    for k in range(1, K + 1):
        a, J, c = _best_of_size(problem, k)
        evals += c
        if J < best_J:
            best_a, best_J = a, J
    return ValveSolution(best_a, best_J, J0 - best_J, int(best_a.sum()), None, True, evals)


def exhaustive_bilevel(problem: InnerProblem, max_valves: int | None = None) -> ValveSolution:
    """Smallest K whose exhaustive optimum meets J <= delta."""
    n = problem.n
    _guard(n)
    cap = n if max_valves is None else min(max_valves, n)
    J0 = float(problem.objective(np.zeros(n))[0])
    best_a, best_J, evals = np.zeros(n, dtype=np.int8), J0, 1
    for k in range(1, cap + 1):
        if best_J <= problem.delta:
            break
        a, J, c = _best_of_size(problem, k)
        evals += c
        if J < best_J:
            best_a, best_J = a, J
    return ValveSolution(best_a, best_J, J0 - best_J, int(best_a.sum()), None,
                         best_J <= problem.delta, evals)


def enumeration_count(n: int, K: int) -> int:
    return sum(comb(n, k) for k in range(K + 1))


# ---------------------------------------------------------------------------
# Random instances
# ---------------------------------------------------------------------------

def random_instance(n: int, seed: int, delta: float = 0.5, n_samples: int = 61,
                    params: PlantParams | None = None,
                    topology: Topology | None = None) -> InnerProblem:
    """Measured state drawn uniformly: air in [1, 4.5] degC, food in [0, 5] degC.

    The band straddles the upper bound the way closed-loop states do, so the
    optimal budgets spread over the whole range instead of saturating.
    """
    if params is None:
        params, topology = default_params(n)
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.uniform(0.0, 5.0, n), rng.uniform(1.0, 4.5, n)])
    return make_problem(x, params, topology, delta, n_samples)


# ---------------------------------------------------------------------------
# Property checks
# ---------------------------------------------------------------------------

def all_subset_values(problem: InnerProblem) -> np.ndarray:
    """V for every subset, indexed by bitmask (bit i = valve i)."""
    n = problem.n
    masks = np.arange(2 ** n)
    alphas = ((masks[:, None] >> np.arange(n)) & 1).astype(float)
    J = problem.objective(alphas)
    return J[0] - J


def check_submodularity(problem: InnerProblem | None = None, *, set_function=None,
                        n: int | None = None, tol: float = 1e-9,
                        name: str = "submodularity") -> PropertyReport:
    """Diminishing returns over every (X, Y, a) with X within Y and a outside Y.

    Monotonicity (V(X) <= V(Y) for X within Y) is checked at the same time.
    ``set_function`` (a callable on frozensets, with ``n``) replaces the
    refrigeration problem for synthetic checks.
    """
    if set_function is not None:
        if n is None:
            raise ValueError("n is required with set_function")
        _guard(n, MAX_TRIPLE_N)
        V = np.array([set_function(frozenset(i for i in range(n) if m >> i & 1))
                      for m in range(2 ** n)], dtype=float)
    else:
        n = problem.n
        _guard(n, MAX_TRIPLE_N)
        V = all_subset_values(problem)
    report = PropertyReport(name, instances=1)
    full = 2 ** n - 1
    for Y in range(2 ** n):
        X = Y
        while True:
            if V[X] > V[Y] + tol:
                report.violations.append({"kind": "monotonicity", "X": X, "Y": Y,
                                          "margin": float(V[Y] - V[X])})
            outside = full & ~Y
            a = outside
            while a:
                bit = a & -a
                margin = (V[X | bit] - V[X]) - (V[Y | bit] - V[Y])
                report.checks += 1
                report.note_margin(margin)
                if margin < -tol:
                    report.violations.append({"kind": "submodularity", "X": X, "Y": Y,
                                              "a": bit.bit_length() - 1, "margin": float(margin)})
                a ^= bit
            if X == 0:
                break
            X = (X - 1) & Y
    return report


def check_monotone_dynamics(params: PlantParams, topology: Topology, trials: int = 100,
                            seed: int = 0, duration: float = 600.0, h: float = 1.0,
                            tol: float = 1e-9, evap_sign: float = 1.0) -> PropertyReport:
    """Paired simulations with ordered valve inputs give ordered temperatures.

    The suction pressure is held at its reference (ideal suction regulation)
    so the comparison isolates the thermal dynamics.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    n = params.n
    plant = Plant(params, topology, hold_pressure=True, evap_sign=evap_sign)
    rng = np.random.default_rng(seed)
    report = PropertyReport("input-monotone dynamics", seeds=[seed])
    steps = int(round(duration / h))
    for trial in range(trials):
        beta = rng.integers(0, 2, n)
        alpha = beta & rng.integers(0, 2, n)
        x0 = np.concatenate([rng.uniform(0.0, 8.0, 2 * n), [params.P_ref]])
        xa, xb = x0.copy(), x0.copy()
        for k in range(steps):
            xa = plant.step(xa, alpha, 0, h)
            xb = plant.step(xb, beta, 0, h)
            gap = float(np.min(xa[:2 * n] - xb[:2 * n]))
            report.checks += 1
            report.note_margin(gap)
            if gap < -tol:
                report.violations.append({"trial": trial, "time_s": (k + 1) * h,
                                          "alpha": alpha.tolist(), "beta": beta.tolist(),
                                          "margin": gap})
                break
        report.instances += 1
    return report


def check_gradient(problems, eps: float = 1e-4, rtol: float = 1e-4,
                   scheme: str = "central") -> PropertyReport:
    """Adjoint gains against finite differences, relative norm error."""
    report = PropertyReport("adjoint vs finite difference")
    for k, p in enumerate(problems):
        g_adj = marginal_gains_adjoint(p)
        g_fd = marginal_gains_fd(p, eps, scheme)
        scale = max(np.linalg.norm(g_fd), 1e-12)
        err = float(np.linalg.norm(g_adj - g_fd) / scale)
        report.instances += 1
        report.checks += 1
        report.note_margin(rtol - err)
        if err > rtol and np.linalg.norm(g_fd) > 1e-12:
            report.violations.append({"instance": k, "relative_error": err})
    return report


def check_posterior_bound(problems, tol: float = 1e-9) -> PropertyReport:
    """rho * V(exhaustive) <= V(linear) for every budget K."""
    report = PropertyReport("a-posteriori bound of the linear surrogate")
    for k, p in enumerate(problems):
        report.instances += 1
        gains = marginal_gains_adjoint(p)
        for K in range(p.n + 1):
            lin = solve_inner_linear(p, K, gains)
            v_lin = p.J0 - float(p.objective(lin.alpha)[0])
            if lin.rho is None:
                continue
            opt = exhaustive_inner(p, K)
            margin = v_lin - lin.rho * opt.value
            report.checks += 1
            report.note_margin(margin)
            if margin < -tol * max(1.0, opt.value):
                report.violations.append({"instance": k, "K": K, "rho": lin.rho,
                                          "V_linear": v_lin, "V_opt": opt.value, "margin": margin})
    return report


def check_greedy_bound(problems, tol: float = 1e-9) -> PropertyReport:
    """V(greedy) >= (1 - 1/e) V(exhaustive), and V(exhaustive) >= V(greedy)."""
    report = PropertyReport("greedy approximation bound")
    factor = 1.0 - 1.0 / math.e
    for k, p in enumerate(problems):
        report.instances += 1
        for K in range(p.n + 1):
            gr = solve_inner_greedy(p, K)
            opt = exhaustive_inner(p, K)
            lo = gr.value - factor * opt.value
            hi = opt.value - gr.value
            report.checks += 1
            report.note_margin(min(lo, hi))
            scale = tol * max(1.0, opt.value)
            if lo < -scale or hi < -scale:
                report.violations.append({"instance": k, "K": K, "V_greedy": gr.value,
                                          "V_opt": opt.value})
    return report


def check_bilevel_greedy_count(problems) -> PropertyReport:
    """Bilevel greedy never opens fewer valves than the exhaustive minimum."""
    report = PropertyReport("bilevel greedy count vs exhaustive minimum")
    for k, p in enumerate(problems):
        report.instances += 1
        report.checks += 1
        g = solve_bilevel_greedy(p)
        o = exhaustive_bilevel(p)
        report.note_margin(g.budget - o.budget)
        if g.feasible and g.budget < o.budget:
            report.violations.append({"instance": k, "K_greedy": g.budget, "K_opt": o.budget})
    return report


# ---------------------------------------------------------------------------
# Closed-loop comparison
# ---------------------------------------------------------------------------

def suboptimality_ratio(controller_trace: Trajectory, oracle_trace: Trajectory) -> float:
    """Oracle average power over controller average power, in percent."""
    if not math.isclose(controller_trace.duration, oracle_trace.duration, rel_tol=0, abs_tol=1e-6):
        raise ValueError("traces cover different horizons")
    p_ctl = controller_trace.energy() / controller_trace.duration
    p_orc = oracle_trace.energy() / oracle_trace.duration
    if p_ctl == 0:
        return 100.0 if p_orc == 0 else math.inf
    return 100.0 * p_orc / p_ctl

