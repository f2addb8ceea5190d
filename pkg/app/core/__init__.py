"""
app/core/__init__.py
Core estimation package
"""

from .exceptions import (
    ArchiveError,
    BasisError,
    ConfigError,
    DataError,
    DivergenceError,
    IndefiniteHessianError,
    InitializationError,
    LinkDegeneracyError,
    OuterConvergenceError,
    SmoothModelError,
)
from .design import ModelConfig, ModelDesign, SmoothTerm, assemble_design
from .inference import FitResult
from .model import FitOptions, SmoothModel, load_model_config, read_data
from .archive import load_model, save_model

__all__ = [
    "SmoothModelError",
    "DataError",
    "ConfigError",
    "BasisError",
    "LinkDegeneracyError",
    "InitializationError",
    "DivergenceError",
    "IndefiniteHessianError",
    "OuterConvergenceError",
    "ArchiveError",
    "ModelConfig",
    "ModelDesign",
    "SmoothTerm",
    "assemble_design",
    "FitResult",
    "FitOptions",
    "SmoothModel",
    "load_model_config",
    "read_data",
    "load_model",
    "save_model",
]
