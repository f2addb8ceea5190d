"""
app/core/exceptions.py - Error types raised by the smoothing library
"""

from typing import Any, Optional


class SmoothModelError(Exception):
    """Base class for all library errors"""


class DataError(SmoothModelError, ValueError):
    """Input data is unusable (bad values, missing rows, wrong types)"""


class ConfigError(SmoothModelError, ValueError):
    """Model configuration is malformed or references unknown items"""


class BasisError(SmoothModelError, ValueError):
    """A smooth term cannot be represented on the supplied covariate"""


class LinkDegeneracyError(SmoothModelError, ArithmeticError):
    """Link derivative vanished where the transform divides by it"""


class InitializationError(SmoothModelError, RuntimeError):
    """Likelihood is not finite at the starting coefficients"""


class DivergenceError(SmoothModelError, RuntimeError):
    """Inner iteration failed; the last state is kept for inspection"""

    def __init__(self, message: str, state: Optional[Any] = None):
        super().__init__(message)
        self.state = state


class IndefiniteHessianError(SmoothModelError, RuntimeError):
    """Penalized Hessian is not positive definite at a converged fit"""


class OuterConvergenceError(SmoothModelError, RuntimeError):
    """Smoothing parameter optimization hit its iteration cap"""

    def __init__(self, message: str, trace: Optional[Any] = None, result: Optional[Any] = None):
        super().__init__(message)
        self.trace = trace
        self.result = result


class ArchiveError(SmoothModelError, ValueError):
    """Model archive cannot be read"""
