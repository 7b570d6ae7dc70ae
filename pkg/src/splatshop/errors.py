"""Exception types shared across the package."""


class SplatError(Exception):
    """Base class for all errors raised by this package."""


class ArgumentError(SplatError):
    """An argument violates a documented precondition."""


class DataError(SplatError):
    """Stored or user-supplied data is structurally invalid."""


class StateError(SplatError):
    """An operation was invoked against stale or inconsistent state."""


class ConfigError(SplatError):
    """A configuration object or file is malformed."""


class ConflictError(SplatError):
    """A request refers to a superseded resource (stale suggestion id)."""


class NonFiniteError(SplatError):
    """Numerical input contains NaN or infinity."""


class GatewayError(SplatError):
    """An upstream service failed or timed out."""
