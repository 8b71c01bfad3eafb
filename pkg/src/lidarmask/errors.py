"""Exception types shared across the package."""


class LmcError(Exception):
    """Base class for every error raised by lidarmask."""


class StructuralError(LmcError, ValueError):
    """A buffer does not have the shape its layout or container demands."""


class ParameterError(LmcError, ValueError):
    """An argument is outside its documented domain."""


class CapabilityError(LmcError):
    """The requested codec is not available in this installation."""


class FormatError(LmcError):
    """Input is not in the expected file or wire format (bad magic, version)."""


class IntegrityError(LmcError):
    """Data failed a checksum or decoded to an impossible length."""

    def __init__(self, message, frame_index=None):
        if frame_index is not None:
            message = f"frame {frame_index}: {message}"
        super().__init__(message)
        self.frame_index = frame_index


class TruncationError(LmcError):
    """Input ended before a complete record, frame or terminal marker."""


class TruncationWarning(UserWarning):
    """A trailing partial record was ignored."""
