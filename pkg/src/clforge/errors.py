"""Exception types shared across the package."""


class ClforgeError(Exception):
    """Base class for all package errors."""


class DimensionTooSmall(ClforgeError, ValueError):
    pass


class DimensionMismatch(ClforgeError, ValueError):
    pass


class BadMagic(ClforgeError, ValueError):
    pass


class TruncatedFile(ClforgeError, ValueError):
    pass


class NotEnoughSamples(ClforgeError, ValueError):
    pass


class NonFiniteUpdate(ClforgeError, FloatingPointError):
    pass


class ModeMismatch(ClforgeError, ValueError):
    pass


class MissingSnapshot(ClforgeError, KeyError):
    pass


class MissingLossTrace(ClforgeError, ValueError):
    pass


class ConfigError(ClforgeError, ValueError):
    pass


class SchemaMismatch(ClforgeError, ValueError):
    pass
