"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration, geometry, or parameter combination."""


class BoundsError(IndexError):
    """An index, extraction window, or array geometry falls out of range."""


class DomainError(ValueError):
    """A numeric argument lies outside the domain of the function."""


class FormatError(ValueError):
    """A serialized file has the wrong magic bytes, is truncated, or is malformed."""


class StateError(RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class TrainingDivergedError(ArithmeticError):
    """A training step produced a non-finite loss."""
