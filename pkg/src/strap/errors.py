"""Exception types shared across the package.

The CLI maps these onto process exit codes, so every failure that should be
reported to a user goes through one of them.
"""


class StrapError(Exception):
    """Base class for all package errors."""


class DimensionError(StrapError, ValueError):
    """Operand shapes do not conform."""


class ConfigError(StrapError, ValueError):
    """A run or generator configuration failed validation."""


class DataError(StrapError, ValueError):
    """An input table, graph or checkpoint file is malformed."""


class NumericalError(StrapError, ArithmeticError):
    """A loss, gradient or parameter became non-finite."""
