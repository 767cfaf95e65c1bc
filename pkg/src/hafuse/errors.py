"""Exception types shared across the package."""


class HafuseError(Exception):
    """Base class for all errors raised by hafuse."""


class DimensionError(HafuseError, ValueError):
    """Tensor shapes are incompatible for an operation."""


class GeometryError(HafuseError, ValueError):
    """A spatial configuration yields an empty or invalid output."""


class ParameterError(HafuseError, ValueError):
    """An operation parameter is outside its valid domain."""


class ContractError(HafuseError, RuntimeError):
    """A calling contract was violated (e.g. non-scalar backward root)."""


class NumericError(HafuseError, FloatingPointError):
    """A NaN or Inf was produced from finite inputs."""


class ConfigError(HafuseError, ValueError):
    """A configuration value or key is invalid."""


class FormatError(HafuseError, ValueError):
    """A file could not be parsed. Carries the byte offset when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
