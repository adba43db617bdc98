"""Exception hierarchy shared across the package.

Each family maps to a distinct CLI exit code (see cli.EXIT_CODES).
"""


class SibError(Exception):
    """Base class for all package errors."""


class DimensionError(SibError):
    """Array shapes are inconsistent with the declared dimensions."""


class ValidationError(SibError):
    """Values violate a documented precondition (range, normalization, ...)."""


class ConfigError(SibError):
    """Malformed or contradictory configuration."""


class DataError(SibError):
    """A file on disk could not be parsed (dataset, checkpoint, image)."""


class BudgetExhaustedError(SibError):
    """The oracle query budget cannot cover the requested batch."""

    def __init__(self, message: str, queries_used: int, budget: int):
        super().__init__(message)
        self.queries_used = queries_used
        self.budget = budget


class TrainingError(SibError):
    """Training diverged (non-finite loss)."""
