"""Exception hierarchy shared across the package."""


class FibarError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(FibarError):
    """Invalid parameter or configuration value."""


class FormatError(FibarError):
    """Input bytes do not form a valid stream (bad magic, bad header)."""


class TruncationError(FormatError):
    """Stream ended mid-record."""

    def __init__(self, message, byte_offset):
        super().__init__(f"{message} (byte offset {byte_offset})")
        self.byte_offset = byte_offset


class DataError(FibarError):
    """Well-formed container but invalid payload (out-of-bounds pixel, bad value)."""


class OrderError(FibarError):
    """Event timestamps regressed where non-decreasing order is required."""


class RangeError(FibarError):
    """A value does not fit the field it must be encoded into."""


class EstimationError(FibarError):
    """Threshold estimation cannot proceed (no usable pixels)."""


class InvariantError(FibarError):
    """Internal bookkeeping invariant violated."""
