"""Streaming varying-coefficient tracking with FDR-controlled screening."""

from .core import Observation, TimePoint, WeightSpec, weight, weight_mass_limit
from .bandwidth import LambdaGrid, TrimmedSet, build_grid
from .engine import Engine, EngineConfig, StepRecord, run
from .simulator import Dataset, GroundTruth, SimConfig, simulate

__version__ = "0.1.0"

__all__ = [
    "Observation",
    "TimePoint",
    "WeightSpec",
    "weight",
    "weight_mass_limit",
    "LambdaGrid",
    "TrimmedSet",
    "build_grid",
    "Engine",
    "EngineConfig",
    "StepRecord",
    "run",
    "Dataset",
    "GroundTruth",
    "SimConfig",
    "simulate",
    "__version__",
]
