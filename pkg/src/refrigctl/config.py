"""YAML run configuration: plant parameters, controller settings, scenario settings.

The exported file carries a unit comment on every key.  Floats are written
with ``repr`` so a load of an export reproduces the configuration exactly.
Unknown keys are rejected rather than ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from refrigctl.optctl import DEFAULT_DELTA, DEFAULT_SAMPLES
from refrigctl.scenario import DEFAULT_SEED, PriceSeries, ScenarioConfig
from refrigctl.thermo import ConfigError, PlantParams, Topology, default_params

_PLANT_UNITS = {
    "n": "number of display cases",
    "m_food": "kg, scalar or one value per case",
    "c_food": "J/(kg K)",
    "m_air": "kg",
    "c_air": "J/(kg K)",
    "T_min": "degC, lower air bound",
    "T_max": "degC, upper air bound",
    "k_food_air": "J/(s K)",
    "k_air_evap": "J/(s K)",
    "k_amb_air": "J/(s K)",
    "T_amb": "degC",
    "m_wall": "kg, stored only",
    "c_wall": "J/(kg K), stored only",
    "m_ref_max": "kg, refrigerant mass per open valve per period",
    "V_suc": "m^3",
    "eta": "volumetric efficiency, (0, 1]",
    "V_comp": "m^3/s",
    "n_c": "number of compressors",
    "dt": "s, control period",
    "K_P": "PI proportional gain",
    "K_I": "PI integral gain (divides the integral)",
    "P_ref": "bar, suction pressure reference",
    "DB": "bar, PI dead band",
    "topology": "chain | ring | isolated | explicit n x n matrix",
    "k_neighbor": "J/(s K), coupling for chain and ring",
}

_CONTROLLER_UNITS = {
    "delta": "degC^2 s, overshoot threshold of the valve search",
    "n_samples": "prediction samples per control period",
    "h": "s, plant integration step",
}

_SCENARIO_UNITS = {
    "duration_s": "s",
    "seed": "food-mass perturbation seed",
    "perturb_food_mass": "draw masses within +-20% of nominal",
    "T0": "degC, initial food and air temperature",
    "P0": "bar, initial suction pressure",
    "dr_threshold": "$/kWh, valve cap applies strictly above",
    "dr_cap_fraction": "fraction of valves allowed while capped",
    "prices": "price CSV path, or null",
}

_PARAM_FIELDS = [f.name for f in fields(PlantParams)]
_PER_CASE = ("m_food", "c_food", "m_air", "c_air", "T_min", "T_max")


@dataclass
class RunConfig:
    params: PlantParams
    topology: Topology
    delta: float = DEFAULT_DELTA
    n_samples: int = DEFAULT_SAMPLES
    h: float = 1.0
    duration_s: float = 28800.0
    seed: int = DEFAULT_SEED
    perturb_food_mass: bool = True
    T0: float = 3.0
    P0: float = 1.4
    dr_threshold: float = 0.1
    dr_cap_fraction: float = 0.7
    prices: str | None = None
    k_neighbor: float | None = field(default=500.0, compare=False)

    @classmethod
    def defaults(cls, n: int = 10) -> "RunConfig":
        params, topology = default_params(n)
        return cls(params, topology)

    def scenario(self, controller: str, seed: int | None = None,
                 duration_s: float | None = None,
                 prices: PriceSeries | None = None) -> ScenarioConfig:
        if prices is None and self.prices:
            prices = PriceSeries.from_csv(self.prices)
        return ScenarioConfig(
            duration_s=self.duration_s if duration_s is None else duration_s,
            controller=controller, seed=self.seed if seed is None else seed,
            perturb=self.perturb_food_mass, delta=self.delta, n_samples=self.n_samples,
            h=self.h, T0=self.T0, P0=self.P0, prices=prices,
            dr_threshold=self.dr_threshold, dr_cap_fraction=self.dr_cap_fraction,
            params=self.params, topology=self.topology)


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return yaml.safe_dump(v, default_flow_style=True).strip().removesuffix("...").strip()


def _line(key: str, value, unit: str) -> str:
    return f"  {key}: {_fmt(value)}  # {unit}"


def dumps(cfg: RunConfig) -> str:
    p = cfg.params
    out = ["# refrigctl run configuration", "plant:"]
    out.append(_line("n", p.n, _PLANT_UNITS["n"]))
    for name in _PARAM_FIELDS:
        v = getattr(p, name)
        if name in _PER_CASE and len(set(v)) == 1:
            v = v[0]
        out.append(_line(name, v, _PLANT_UNITS[name]))
    topo = cfg.topology
    if topo.kind in ("chain", "ring", "isolated") and _rebuild_topology(topo.kind, p.n, cfg.k_neighbor) == topo:
        out.append(_line("topology", topo.kind, _PLANT_UNITS["topology"]))
        out.append(_line("k_neighbor", float(cfg.k_neighbor), _PLANT_UNITS["k_neighbor"]))
    else:
        out.append(_line("topology", [list(r) for r in topo.k], _PLANT_UNITS["topology"]))
    out.append("controller:")
    for key in _CONTROLLER_UNITS:
        out.append(_line(key, getattr(cfg, key), _CONTROLLER_UNITS[key]))
    out.append("scenario:")
    for key in _SCENARIO_UNITS:
        out.append(_line(key, getattr(cfg, key), _SCENARIO_UNITS[key]))
    return "\n".join(out) + "\n"


def dump(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(dumps(cfg))
    return path


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------

def _rebuild_topology(kind: str, n: int, k_neighbor) -> Topology:
    k_neighbor = 500.0 if k_neighbor is None else float(k_neighbor)
    if kind == "chain":
        return Topology.chain(n, k_neighbor)
    if kind == "ring":
        return Topology.ring(n, k_neighbor)
    if kind == "isolated":
        return Topology.isolated(n)
    raise ConfigError([f"plant.topology: unknown kind {kind!r}"])


def _number(section: str, key: str, v, problems: list, kind=float):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        problems.append(f"{section}.{key}: expected a number, got {v!r}")
        return None
    if kind is int:
        if float(v) != int(v):
            problems.append(f"{section}.{key}: expected an integer, got {v!r}")
            return None
        return int(v)
    return float(v)


def loads(text: str) -> RunConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"YAML parse error: {exc}"]) from None
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a mapping"])
    problems = [f"unknown section {k!r}" for k in raw if k not in ("plant", "controller", "scenario")]
    sections = {}
    for name, allowed in (("plant", _PLANT_UNITS), ("controller", _CONTROLLER_UNITS),
                          ("scenario", _SCENARIO_UNITS)):
        sec = raw.get(name) or {}
        if not isinstance(sec, dict):
            problems.append(f"{name}: must be a mapping")
            sec = {}
        problems += [f"{name}.{k}: unknown key" for k in sec if k not in allowed]
        sections[name] = {k: v for k, v in sec.items() if k in allowed}
    if problems:
        raise ConfigError(problems)

    plant = dict(sections["plant"])
    n = _number("plant", "n", plant.pop("n", 10), problems, int)
    topo_spec = plant.pop("topology", "chain")
    k_neighbor = plant.pop("k_neighbor", 500.0)
    if k_neighbor is not None:
        k_neighbor = _number("plant", "k_neighbor", k_neighbor, problems)
    kwargs = {}
    for key, v in plant.items():
        if key in _PER_CASE and isinstance(v, list):
            vals = [_number("plant", key, x, problems) for x in v]
            kwargs[key] = tuple(vals)
        else:
            kwargs[key] = _number("plant", key, v, problems, int if key == "n_c" else float)
    if problems:
        raise ConfigError(problems)
    n = n if n is not None else 10
    for key in _PER_CASE:
        v = kwargs.get(key)
        if isinstance(v, tuple) and len(v) != n:
            problems.append(f"plant.{key}: expected {n} values, got {len(v)}")
    if "m_food" not in kwargs:
        kwargs["m_food"] = 200.0
    if not isinstance(kwargs["m_food"], tuple):
        kwargs["m_food"] = (kwargs["m_food"],) * n
    if problems:
        raise ConfigError(problems)
    params = PlantParams(**kwargs)

    if isinstance(topo_spec, str):
        topology = _rebuild_topology(topo_spec, n, k_neighbor)
    elif isinstance(topo_spec, list):
        try:
            topology = Topology.from_matrix(np.array(topo_spec, dtype=float))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError([f"plant.topology: {exc}"]) from None
        if topology.n != n:
            raise ConfigError([f"plant.topology: expected {n} x {n} matrix"])
    else:
        raise ConfigError([f"plant.topology: unsupported value {topo_spec!r}"])

    cfg = RunConfig(params, topology, k_neighbor=k_neighbor)
    ctl = sections["controller"]
    for key in _CONTROLLER_UNITS:
        if key in ctl:
            v = _number("controller", key, ctl[key], problems, int if key == "n_samples" else float)
            setattr(cfg, key, v)
    scn = sections["scenario"]
    for key in _SCENARIO_UNITS:
        if key not in scn:
            continue
        v = scn[key]
        if key == "perturb_food_mass":
            if not isinstance(v, bool):
                problems.append(f"scenario.{key}: expected true or false")
        elif key == "prices":
            if v is not None and not isinstance(v, str):
                problems.append(f"scenario.{key}: expected a path or null")
        else:
            v = _number("scenario", key, v, problems, int if key == "seed" else float)
        setattr(cfg, key, v)
    if problems:
        raise ConfigError(problems)
    problems += validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def validate(cfg: RunConfig) -> list[str]:
    out = []
    if not cfg.delta >= 0:
        out.append("controller.delta must be nonnegative")
    if cfg.n_samples < 2:
        out.append("controller.n_samples must be >= 2")
    if not cfg.h > 0:
        out.append("controller.h must be positive")
    if not cfg.duration_s > 0:
        out.append("scenario.duration_s must be positive")
    if not 0 < cfg.dr_cap_fraction <= 1:
        out.append("scenario.dr_cap_fraction must lie in (0, 1]")
    if not cfg.dr_threshold >= 0:
        out.append("scenario.dr_threshold must be nonnegative")
    if not cfg.P0 > 0:
        out.append("scenario.P0 must be positive")
    return out


def load(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file not found: {path}"])
    cfg = loads(path.read_text())
    if cfg.prices and not Path(cfg.prices).is_absolute():
        cfg = replace(cfg, prices=str(path.parent / cfg.prices))
    return cfg
