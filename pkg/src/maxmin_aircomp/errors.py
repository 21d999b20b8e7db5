"""Exception hierarchy shared by the library and the CLI."""


class AirCompError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(AirCompError, ValueError):
    """Inconsistent dimensions or malformed configuration."""


class IngestionError(AirCompError, ValueError):
    """Input data could not be read (non-finite values, bad header, ...)."""


class InsufficientDataError(AirCompError, ValueError):
    """Too few samples to estimate a statistic."""


class DomainError(AirCompError, ValueError):
    """A numeric argument is outside the domain of the operation."""


class DegenerateInstanceError(AirCompError):
    """A class pair cannot be separated by any allocation."""

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class SolverFailureError(AirCompError):
    """The convex subproblem solver did not converge.

    ``best`` holds the best strictly feasible iterate reached, as a flat
    variable vector, or None when no progress was made.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class LearningRateError(DomainError):
    """Training diverged to a non-finite loss."""
