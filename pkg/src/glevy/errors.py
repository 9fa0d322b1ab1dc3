"""Exception hierarchy shared by all modules."""


class GLevyError(Exception):
    """Base class for every error raised by the package."""


class ModelError(GLevyError):
    pass


class EmptyFamily(ModelError):
    pass


class AtomAtOrigin(ModelError):
    pass


class DegenerateDensityRatio(ModelError):
    pass


class MissingProbePoint(GLevyError):
    pass


class NumericError(GLevyError):
    """Numerical failure inside a solver (mapped to CLI exit code 3)."""


class CflViolation(NumericError):
    pass


class NonFiniteValue(NumericError):
    pass


class PartitionTooLong(GLevyError):
    pass


class OutOfLatticeRange(GLevyError):
    pass


class NonPositiveDensityRatio(GLevyError):
    pass


class InvalidExponent(GLevyError):
    pass


class ConfigError(GLevyError):
    """Malformed or schema-invalid configuration (CLI exit code 2)."""


class GridError(GLevyError):
    """Grid too small or inconsistent with the model."""
