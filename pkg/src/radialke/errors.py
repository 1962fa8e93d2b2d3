"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A problem is assembled inconsistently (slopes, schedules, parameters)."""


class ConvergenceError(RuntimeError):
    """An iterative solve failed to reach its tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual
