"""Exception types shared across the package."""


class SkelactError(Exception):
    """Base class for every error raised by this package."""


class KeypointParseError(SkelactError):
    """A keypoint file is malformed. Carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class LayoutMismatchError(SkelactError):
    """Data does not match the declared skeleton layout."""


class EmptySequenceError(SkelactError):
    """A sample directory contains no keypoint frame files."""


class InsufficientDataError(SkelactError):
    """A protocol asks for more samples or classes than the manifest holds."""


class ConnectivityError(SkelactError):
    """A skeleton graph is not connected."""


class ConfigurationError(SkelactError):
    """A configuration value is invalid. The message names the field."""


class WindowError(ConfigurationError):
    """A frame window cannot be cut from the sequence as requested."""


class CheckpointError(SkelactError):
    """A checkpoint file is unreadable or incompatible with the network."""


class StateError(SkelactError):
    """An operation was called out of order, e.g. backward before forward."""


class UndefinedCorrelationError(SkelactError):
    """A correlation is undefined because one input has zero variance."""


class CoverageError(SkelactError):
    """Prediction records do not cover the requested evaluation split."""
