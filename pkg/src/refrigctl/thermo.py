"""R134a property fits and the validated plant parameter set.

All five refrigerant properties are polynomial fits in the suction pressure
(bar).  They are only meaningful near the operating point, so the sign
invariants are checked over ``OPERATING_RANGE``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

OPERATING_RANGE = (0.6, 2.2)  # bar


class DomainError(ValueError):
    """Raised when a property is evaluated at a non-physical pressure."""


class ConfigError(ValueError):
    """Raised when parameters violate one or more invariants.

    ``violations`` holds one human-readable line per broken invariant.
    """

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


def _horner(coeffs: tuple[float, ...], x: float) -> float:
    acc = 0.0
    for c in coeffs:
        acc = acc * x + c
    return acc


def _check_pressure(p):
    if isinstance(p, float | int):
        if not math.isfinite(p) or p <= 0.0:
            raise DomainError(f"suction pressure must be finite and positive, got {float(p)!r}")
        return float(p)
    arr = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError("suction pressure must be finite and positive")
    return arr


@dataclass(frozen=True)
class RefrigerantModel:
    """Polynomial property fits, coefficients highest degree first."""

    T_evap: tuple[float, ...]      # degC
    dh_evap: tuple[float, ...]     # J/kg
    rho_suc: tuple[float, ...]     # kg/m^3
    drho_dP: tuple[float, ...]     # kg/(m^3 bar)
    csp: tuple[float, ...]         # J/m^3, rho_suc * (h_oc - h_ic)

    def _eval(self, coeffs, p):
        p = _check_pressure(p)
        if isinstance(p, float):
            return _horner(coeffs, p)
        return np.polyval(coeffs, p)

    def evaporation_temperature(self, p):
        return self._eval(self.T_evap, p)

    def evaporation_enthalpy(self, p):
        return self._eval(self.dh_evap, p)

    def suction_density(self, p):
        return self._eval(self.rho_suc, p)

    def density_pressure_gradient(self, p):
        return self._eval(self.drho_dP, p)

    def compressor_specific_power(self, p):
        return self._eval(self.csp, p)

    def check_operating_range(self, lo: float = OPERATING_RANGE[0], hi: float = OPERATING_RANGE[1],
                              samples: int = 21) -> list[str]:
        """Return the sign invariants that fail on an even grid over [lo, hi]."""
        grid = np.linspace(lo, hi, samples)
        problems = []
        if np.any(self.evaporation_temperature(grid) >= 0.0):
            problems.append("evaporation temperature must stay below 0 degC")
        if np.any(self.suction_density(grid) <= 0.0):
            problems.append("suction density must be positive")
        if np.any(self.density_pressure_gradient(grid) <= 0.0):
            problems.append("density-pressure gradient must be positive")
        if np.any(self.compressor_specific_power(grid) <= 0.0):
            problems.append("compressor specific power must be positive")
        return problems


R134A = RefrigerantModel(
    T_evap=(-4.3544, 29.2240, -51.2005),
    dh_evap=(0.0217e5, -0.1704e5, 2.2988e5),
    rho_suc=(4.6073, 0.3798),
    drho_dP=(-0.0329, 0.2161, -0.4742, 5.4817),
    csp=(0.0265e5, -0.4346e5, 2.4923e5, 1.2189e5),
)


def evaporation_temperature(p_suc, refrigerant: RefrigerantModel = R134A):
    """Evaporation temperature [degC] at suction pressure ``p_suc`` [bar]."""
    return refrigerant.evaporation_temperature(p_suc)


def evaporation_enthalpy(p_suc, refrigerant: RefrigerantModel = R134A):
    """Latent heat of evaporation [J/kg]. Exposed for completeness; the plant does not use it."""
    return refrigerant.evaporation_enthalpy(p_suc)


def suction_density(p_suc, refrigerant: RefrigerantModel = R134A):
    return refrigerant.suction_density(p_suc)


def density_pressure_gradient(p_suc, refrigerant: RefrigerantModel = R134A):
    return refrigerant.density_pressure_gradient(p_suc)


def compressor_specific_power(p_suc, refrigerant: RefrigerantModel = R134A):
    """Compressor work per unit of swept volume [J/m^3]."""
    return refrigerant.compressor_specific_power(p_suc)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

_PER_CASE = ("m_food", "c_food", "m_air", "c_air", "T_min", "T_max")


@dataclass(frozen=True)
class PlantParams:
    """Physical constants, control period and PI settings of one refrigerator.

    Per-case quantities are stored as tuples of length ``n``; scalars passed
    to the constructor are broadcast using the length of ``m_food``.
    """

    m_food: tuple[float, ...]              # kg
    c_food: tuple[float, ...] | float = 1000.0   # J/(kg K)
    m_air: tuple[float, ...] | float = 50.0      # kg
    c_air: tuple[float, ...] | float = 1000.0    # J/(kg K)
    T_min: tuple[float, ...] | float = 0.0       # degC
    T_max: tuple[float, ...] | float = 5.0       # degC
    k_food_air: float = 300.0              # J/(s K)
    k_air_evap: float = 225.0              # J/(s K)
    k_amb_air: float = 275.0               # J/(s K)
    T_amb: float = 20.0                    # degC
    m_wall: float = 260.0                  # kg, stored only
    c_wall: float = 385.0                  # J/(kg K), stored only
    m_ref_max: float = 1.0                 # kg
    V_suc: float = 10.0                    # m^3
    eta: float = 0.81                      # volumetric efficiency
    V_comp: float = 0.2                    # m^3/s
    n_c: int = 7
    dt: float = 60.0                       # s, control period
    K_P: float = 0.1
    K_I: float = -0.8
    P_ref: float = 1.4                     # bar
    DB: float = 0.3                        # bar

    def __post_init__(self):
        if np.ndim(self.m_food) == 0:
            raise ConfigError(["m_food must be a per-case sequence"])
        n = len(self.m_food)
        for name in _PER_CASE:
            value = getattr(self, name)
            if np.ndim(value) == 0:
                value = (float(value),) * n
            else:
                value = tuple(float(v) for v in value)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "n_c", int(self.n_c))
        problems = self.violations()
        if problems:
            raise ConfigError(problems)

    @property
    def n(self) -> int:
        return len(self.m_food)

    @property
    def k_c(self) -> float:
        """Volume flow of one running compressor [m^3/s].

        Divides by the case count ``n`` rather than ``n_c``, as written in
        the source model.
        """
        return self.eta * self.V_comp / self.n

    def vec(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, name), dtype=float)

    def violations(self) -> list[str]:
        out = []
        n = len(self.m_food)
        if n < 1:
            out.append("n must be >= 1 (m_food is empty)")
        for name in _PER_CASE:
            if len(getattr(self, name)) != n:
                out.append(f"{name} must have length n={n}")
        for name in ("m_food", "c_food", "m_air", "c_air"):
            vals = getattr(self, name)
            if not all(math.isfinite(v) and v > 0 for v in vals):
                out.append(f"{name} must be strictly positive")
        if len(self.T_min) == len(self.T_max) and not all(
                lo < hi for lo, hi in zip(self.T_min, self.T_max)):
            out.append("T_min must be < T_max for every case")
        for name in ("k_food_air", "k_air_evap", "k_amb_air", "m_wall", "c_wall",
                     "m_ref_max", "V_suc", "V_comp", "dt", "P_ref"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                out.append(f"{name} must be strictly positive (got {v!r})")
        if not (0 < self.eta <= 1):
            out.append(f"eta must lie in (0, 1] (got {self.eta!r})")
        if self.n_c < 1:
            out.append(f"n_c must be >= 1 (got {self.n_c!r})")
        if not (math.isfinite(self.DB) and self.DB >= 0):
            out.append(f"DB must be nonnegative (got {self.DB!r})")
        if self.K_I == 0 or not math.isfinite(self.K_I):
            out.append("K_I must be finite and nonzero")
        if not math.isfinite(self.T_amb):
            out.append("T_amb must be finite")
        return out


@dataclass(frozen=True)
class Topology:
    """Symmetric air-to-air coupling coefficients k_ij [J/(s K)]."""

    k: tuple[tuple[float, ...], ...]
    kind: str = field(default="custom", compare=False)

    def __post_init__(self):
        k = tuple(tuple(float(v) for v in row) for row in self.k)
        object.__setattr__(self, "k", k)
        problems = self.violations()
        if problems:
            raise ConfigError(problems)

    @classmethod
    def from_matrix(cls, k) -> "Topology":
        return cls(tuple(map(tuple, np.asarray(k, dtype=float))))

    @classmethod
    def chain(cls, n: int, k_neighbor: float = 500.0) -> "Topology":
        k = np.zeros((n, n))
        idx = np.arange(n - 1)
        k[idx, idx + 1] = k[idx + 1, idx] = k_neighbor
        return cls(tuple(map(tuple, k)), kind="chain")

    @classmethod
    def ring(cls, n: int, k_neighbor: float = 500.0) -> "Topology":
        k = np.asarray(cls.chain(n, k_neighbor).k)
        if n > 2:
            k[0, -1] = k[-1, 0] = k_neighbor
        return cls(tuple(map(tuple, k)), kind="ring")

    @classmethod
    def isolated(cls, n: int) -> "Topology":
        return cls(tuple(map(tuple, np.zeros((n, n)))), kind="isolated")

    @property
    def n(self) -> int:
        return len(self.k)

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.k, dtype=float)

    def violations(self) -> list[str]:
        k = np.array(self.k, dtype=float) if self.k else np.zeros((0, 0))
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            return ["topology must be a square matrix"]
        out = []
        if not np.all(np.isfinite(k)) or np.any(k < 0):
            out.append("topology coefficients must be finite and nonnegative")
        if np.any(np.diag(k) != 0):
            out.append("topology diagonal must be zero")
        if not np.array_equal(k, k.T):
            out.append("topology must be symmetric")
        return out


def default_params(n: int = 10, **overrides) -> tuple[PlantParams, Topology]:
    """Tabulated benchmark parameters with a chain of ``n`` cases.

    Keyword overrides replace individual ``PlantParams`` fields and are
    validated; ``k_neighbor`` sets the chain coupling.
    """
    k_neighbor = overrides.pop("k_neighbor", 500.0)
    base = PlantParams(m_food=(200.0,) * n)
    unknown = set(overrides) - {f.name for f in fields(PlantParams)}
    if unknown:
        raise ConfigError([f"unknown parameter {u!r}" for u in sorted(unknown)])
    params = replace(base, **overrides) if overrides else base
    return params, Topology.chain(params.n, k_neighbor)
