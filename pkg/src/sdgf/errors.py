"""Exception hierarchy shared across the package."""


class SdgfError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SdgfError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(SdgfError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class DataError(SdgfError, ValueError):
    """Malformed or unusable input data (files, tables, windows)."""


class NumericError(SdgfError, ArithmeticError):
    """A computation produced NaN/Inf or attempted division by zero."""


class GraphError(SdgfError, RuntimeError):
    """Misuse of the computation graph (repeated backward, missing grads)."""


class StateError(SdgfError, RuntimeError):
    """An operation was called before the state it depends on exists."""


class CheckpointError(SdgfError, ValueError):
    """Checkpoint bytes are truncated, corrupt, or of an unsupported version."""
