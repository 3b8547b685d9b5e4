"""Spin dynamics of NV centres in rotationally diffusing nanodiamonds."""

__version__ = "0.1.0"

from .errors import ConvergenceError, NumericalError, StepSizeError, ValidationError
from .physparams import CrystalSpec, DerivedScales, derive_scales, timescale_table

__all__ = [
    "ConvergenceError",
    "CrystalSpec",
    "DerivedScales",
    "NumericalError",
    "StepSizeError",
    "ValidationError",
    "derive_scales",
    "timescale_table",
    "__version__",
]
