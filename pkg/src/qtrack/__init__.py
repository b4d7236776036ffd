"""Quantum trajectories of a measured, feedback-cooled oscillator and their classical tracking."""

from ._core import BACKEND, compiled_available
from .errors import (
    ConfigError,
    DegenerateEnsembleError,
    GridMismatchError,
    InvalidDimensionError,
    InvalidParamsError,
    NonFiniteIncrementError,
    NumericalInvariantError,
    RecordMismatchError,
)
from .params import ModelParams, auto_dim, thermal_occupancy

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "compiled_available",
    "ModelParams",
    "auto_dim",
    "thermal_occupancy",
    "ConfigError",
    "DegenerateEnsembleError",
    "GridMismatchError",
    "InvalidDimensionError",
    "InvalidParamsError",
    "NonFiniteIncrementError",
    "NumericalInvariantError",
    "RecordMismatchError",
]
