"""Exception hierarchy. The CLI maps each family to a stable exit code."""


class BlobLibError(Exception):
    """Base class for every error raised by bloblib."""


class UsageError(BlobLibError, ValueError):
    """Invalid arguments: mismatched dims, out-of-range ids, bad config values."""


class DimsMismatchError(UsageError):
    pass


class ConfigError(UsageError):
    pass


class FormatError(BlobLibError):
    """Malformed or unreadable BLV1 file."""


class BadMagicError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class UnknownDtypeError(FormatError):
    pass


class DimsOverflowError(FormatError):
    pass


class NumericalError(BlobLibError, ArithmeticError):
    """Non-finite values encountered in a loss, gradient, or parameter update."""


class PlacementError(UsageError):
    """Synthetic blobs could not be placed within the retry budget."""
