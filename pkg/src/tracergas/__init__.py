"""Tracer particle in an ideal Bose gas: microscopic and effective dynamics."""

__version__ = "0.1.0"

from .errors import (
    NumericalError,
    SimulationError,
    StructuralError,
    ValidationError,
    ValidityError,
)
from .fields import DensityMatrix, Field, Grid, ManyBodyField
from .model import BumpSpec, GridSpec, ModelConfig, Potentials, TracerSpec, VariantFlags

__all__ = [
    "__version__",
    "BumpSpec",
    "DensityMatrix",
    "Field",
    "Grid",
    "GridSpec",
    "ManyBodyField",
    "ModelConfig",
    "NumericalError",
    "Potentials",
    "SimulationError",
    "StructuralError",
    "TracerSpec",
    "ValidationError",
    "ValidityError",
    "VariantFlags",
]
