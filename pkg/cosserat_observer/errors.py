# cosserat_observer/errors.py
from __future__ import annotations
from typing import Optional


class RodObserverError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(RodObserverError, ValueError):
    pass


class DomainError(RodObserverError, ValueError):
    """SE(3) logarithm requested at (or too close to) a half revolution."""


class DegenerateTangentError(RodObserverError, ValueError):
    pass


class OutOfRangeError(RodObserverError, ValueError):
    """Interpolation outside the recorded time span (no extrapolation)."""


class ConfigurationError(RodObserverError):
    pass


class SingularReflectionError(RodObserverError):
    pass


class DivergenceError(RodObserverError):
    """Non-finite values appeared during a spatial sweep."""


class NonconvergenceError(RodObserverError):
    def __init__(self, message: str, residual: float = float("nan"), time: Optional[float] = None):
        super().__init__(message)
        self.residual = residual
        self.time = time

    def with_time(self, t: float) -> "NonconvergenceError":
        return NonconvergenceError(f"t={t:.6g}s: {self}", residual=self.residual, time=t)
