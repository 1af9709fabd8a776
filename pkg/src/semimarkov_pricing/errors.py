"""Exception types shared across the package."""

from __future__ import annotations


class ValidationError(ValueError):
    """Raised when a model, rate family or config fails validation.

    ``errors`` holds one human-readable string per problem so the CLI can
    report all of them at once.
    """

    def __init__(self, errors: list[str] | str):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class NumericalError(ArithmeticError):
    """A quadrature or root finder failed to reach its tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        self.residual = residual
        super().__init__(message if residual is None else f"{message} (residual estimate {residual:.3e})")


class ConvergenceError(RuntimeError):
    """Fixed-point iteration hit ``max_iter`` before reaching ``tol``."""

    def __init__(self, message: str, history: list[float]):
        self.history = list(history)
        super().__init__(message)


class UnsupportedModelError(ValueError):
    """The requested solver needs a model feature that is not present."""


class AlreadyDefaultedError(ValueError):
    """Firm value is at or below the default barrier at the valuation date."""
