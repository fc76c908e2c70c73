"""Exception hierarchy shared across the package.

Exit-code mapping in the CLI: UsageError -> 1, DataError/FormatError -> 2,
NumericError -> 3.
"""


class SentiformerError(Exception):
    """Base class for all package errors."""


class UsageError(SentiformerError):
    """Caller misused an API or the command line."""


class DimensionError(UsageError):
    """Tensor shapes are incompatible for the requested operation."""


class NumericError(SentiformerError):
    """A computation produced or received non-finite values."""


class DataError(SentiformerError):
    """Input data violates the expected schema or value range."""


class FormatError(DataError):
    """A serialized artifact (checkpoint, dataset file) is malformed."""


class ConfigMismatchError(DataError):
    """A checkpoint's configuration is incompatible with the given data."""
