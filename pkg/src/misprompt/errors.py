"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """A configuration value is invalid."""


class RangeError(IndexError):
    """An index or step lies outside its permitted range."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


class InvariantError(RuntimeError):
    """An internal contract was violated (e.g. a missing gradient)."""


class UndefinedMetricError(ValueError):
    """A metric is undefined for the given labels."""


class DependencyError(RuntimeError):
    """A pipeline stage is missing an input produced by an earlier stage."""
