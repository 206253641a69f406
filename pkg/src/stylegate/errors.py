"""Exception hierarchy.

Every error raised on purpose by this package derives from StylegateError so
the CLI can map failures to a single machine-parsable line and a nonzero exit
code. The class name is the stable error identifier.
"""


class StylegateError(Exception):
    """Base class for all errors raised by stylegate."""


class ShapeError(StylegateError):
    """Operands have incompatible or unsupported shapes."""


class NonFiniteError(StylegateError):
    """An operation produced NaN or Inf values."""


class NonFiniteLossError(NonFiniteError):
    """A training loss went non-finite; carries the diagnostic record."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record or {}


class TapeError(StylegateError):
    """Invalid use of the differentiation tape."""


class GateIndexError(StylegateError):
    """A style, branch, channel, or class index is out of range."""


class ModeError(StylegateError):
    """Operation invoked in the wrong training mode."""


class NumericsError(StylegateError):
    """A numerical routine left its documented tolerance envelope."""


class InsufficientSamplesError(StylegateError):
    """Too few samples accumulated to produce the requested statistic."""


class ConfigError(StylegateError):
    """Malformed configuration key, value, or file."""


class DatasetError(StylegateError):
    """Dataset directory missing, empty, or inconsistent."""


class ImageDecodeError(StylegateError):
    """Image file unreadable, truncated, or of unsupported format."""


class ImageWriteError(StylegateError):
    """Image file could not be written (missing directory, bad suffix)."""


class CheckpointError(StylegateError):
    """Checkpoint file malformed."""


class ChecksumError(CheckpointError):
    """Checkpoint payload does not match its recorded digest."""


class VersionError(CheckpointError):
    """Checkpoint format version unsupported."""
