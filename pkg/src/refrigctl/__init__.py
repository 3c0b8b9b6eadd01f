"""Closed-loop simulation and combinatorial control of multi-case supermarket refrigerators."""

from refrigctl.thermo import (
    R134A,
    ConfigError,
    PlantParams,
    RefrigerantModel,
    Topology,
    default_params,
)
from refrigctl.plant import ControlInput, LinearModel, PlantState, Trajectory

__all__ = [
    "R134A",
    "ConfigError",
    "ControlInput",
    "LinearModel",
    "PlantParams",
    "PlantState",
    "RefrigerantModel",
    "Topology",
    "Trajectory",
    "default_params",
]

__version__ = "0.1.0"
