"""Exception types shared across the toolkit."""


class DimensionError(ValueError):
    """Array shapes are inconsistent with what an operation requires."""


class ArgumentError(ValueError):
    """A scalar argument is outside its legal range."""


class DomainError(ValueError):
    """Array values are outside the operation's domain (e.g. not in {-1, +1})."""


class ConfigError(ValueError):
    """A configuration object fails validation."""


class StateError(RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""
