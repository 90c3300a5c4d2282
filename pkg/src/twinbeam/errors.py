"""Exception types raised across the package."""


class TwinbeamError(Exception):
    """Base class for all package errors."""


class ParameterError(TwinbeamError, ValueError):
    """A parameter lies outside its physical domain."""


class InconsistencyError(TwinbeamError, ValueError):
    """Measurements imply an unphysical quantity (e.g. efficiency > 1)."""


class InsufficientDataError(TwinbeamError, ValueError):
    pass


class DegenerateCalibrationError(TwinbeamError, ValueError):
    pass


class ProtocolError(TwinbeamError, ValueError):
    """Estimate count does not match the series protocol."""


class FitError(TwinbeamError, RuntimeError):
    """A least-squares fit failed to converge."""

    def __init__(self, message, residual=None):
        if residual is not None:
            message = f"{message} (residual sum of squares: {residual:.6g})"
        super().__init__(message)
        self.residual = residual


class DetectionError(TwinbeamError, ValueError):
    """No beam found in a camera frame."""


class RoiConfigurationError(TwinbeamError, ValueError):
    """Fitted ROIs overlap; beams are too close together."""


class BoundsError(TwinbeamError, IndexError):
    pass


class BatchFormatError(TwinbeamError, ValueError):
    """Malformed batch, calibration, or report file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class VersionError(BatchFormatError):
    pass


class ConfigError(TwinbeamError, ValueError):
    """Invalid run configuration; the message names the offending key."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
