class CtPanelError(Exception):
    """Base class for toolkit errors."""

    exit_code = 2


class DataError(CtPanelError, ValueError):
    """Input data violates a documented invariant."""

    exit_code = 2


class ConfigError(CtPanelError, ValueError):
    """Configuration is malformed; message carries the offending field path."""

    exit_code = 1


class NumericalError(CtPanelError, ArithmeticError):
    """A numerical routine failed (unstable drift, non-PSD covariance, ...)."""

    exit_code = 3
