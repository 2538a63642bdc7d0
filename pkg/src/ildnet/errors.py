"""Exception hierarchy shared by every module.

The CLI maps these onto process exit codes: usage errors exit 2, data
errors exit 3, numeric failures exit 4.
"""


class IldError(Exception):
    """Base class for all package errors."""


class ParameterError(IldError, ValueError):
    """An argument or configuration value is out of its valid range."""


class DataError(IldError):
    """Input data is missing, malformed or insufficient."""


class LabelError(IldError, ValueError):
    """Targets passed to a loss are outside the head's domain."""


class CompositionError(IldError, ValueError):
    """Layer shapes do not compose, or an input does not match a layer."""


class StateError(IldError, RuntimeError):
    """An operation was called with a stale or missing cache."""


class StatsError(IldError, ValueError):
    """Class statistics cannot produce balancing weights."""


class NumericError(IldError, ArithmeticError):
    """Base for numeric failures (exit code 4)."""


class TrainingError(NumericError):
    """Training diverged."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class SolverError(NumericError):
    """A linear system could not be solved."""


class UndefinedMetricError(IldError, ValueError):
    """A metric is undefined for the given labels (e.g. AUC with one class)."""
