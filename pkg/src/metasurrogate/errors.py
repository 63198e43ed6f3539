"""Exception hierarchy shared across the package."""


class MetaSurrogateError(Exception):
    """Base class for all package errors."""


class DimensionError(MetaSurrogateError, ValueError):
    """Array shapes do not line up."""


class UnsupportedOpError(MetaSurrogateError, TypeError):
    """An operation outside the differentiable primitive set touched a graph node."""


class NumericError(MetaSurrogateError, ArithmeticError):
    """Non-finite values or a factorisation failure."""


class ExhaustedError(MetaSurrogateError, RuntimeError):
    """A finite pool (candidates, tasks, arms) ran out."""


class DegenerateError(MetaSurrogateError, ValueError):
    """Input is structurally valid but carries no usable information."""


class ConfigError(MetaSurrogateError, ValueError):
    """Experiment configuration failed validation."""


class DataError(MetaSurrogateError, IOError):
    """Dataset file missing or malformed."""


class CheckpointError(MetaSurrogateError, ValueError):
    """Checkpoint unreadable, corrupt or incompatible."""
