"""Exception hierarchy shared by every stage of the pipeline."""


class StatKNNADError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(StatKNNADError, ValueError):
    """Array shapes do not fit together."""


class ConfigError(StatKNNADError, ValueError):
    """Invalid user-supplied configuration."""


class DataError(StatKNNADError, ValueError):
    """Input data cannot be parsed or is degenerate."""


class NotACandidateError(StatKNNADError):
    """A p-value was requested for an instance that failed the anomaly screen."""


class NumericalError(StatKNNADError, ArithmeticError):
    """A quantity underflowed, overflowed or became non-finite."""


class InvariantViolation(StatKNNADError, AssertionError):
    """An internal consistency check failed (e.g. observed point outside its own event)."""
