"""Exception types shared across the package."""


class SplatCubeError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(SplatCubeError):
    """Invalid configuration or unusable argument combination."""


class DataError(SplatCubeError):
    """Malformed input data (files, streams, datasets)."""


class ParseError(DataError):
    """Structured parse failure; carries the byte offset when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(SplatCubeError):
    """Numerical failure (degenerate matrices, failed initialization)."""


class InvalidRotationError(ConfigError):
    """Quaternion cannot be normalized (zero or non-finite)."""


class InvalidScaleError(ConfigError):
    """Scale vector with non-positive or non-finite components."""


class DegenerateCovarianceError(NumericalError):
    """Covariance condition number exceeds the configured cap."""


class OverfullSetError(ConfigError):
    """Set already larger than the requested padded size."""


class InitializationError(NumericalError):
    """Fitting could not start (e.g. no Gaussian visible in any view)."""
