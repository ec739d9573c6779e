"""Exception hierarchy shared by the whole toolkit.

Every error carries the process exit code the CLI maps it to:
0 success, 1 usage/config error, 2 data error, 3 internal error.
"""


class DonodError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 3


class UsageError(DonodError):
    """Bad flag, config value, or parameter combination."""

    exit_code = 1


class DataError(DonodError):
    """Input data that cannot be processed."""

    exit_code = 2


class ShapeMismatch(DataError):
    """Two matrices that were required to share a shape do not."""


class IoError(DataError):
    """A required file is missing or unreadable."""


class FormatError(DataError):
    """A file exists but does not parse under its declared format."""


class EmptyTarget(DataError):
    """Sample has no supervised target tokens after encoding/truncation."""


class TokenizationFailure(DataError):
    """Sample text cannot be encoded by the probe tokenizer."""


class UnknownSampleId(DataError):
    """An operation referenced a sample id absent from the dataset."""


class EmptySelection(DataError):
    """An overlap or comparison was requested against an empty selection."""


class MissingMetrics(DataError):
    """The metrics file does not cover every sample in the dataset."""

    def __init__(self, message, missing_ids=()):
        super().__init__(message)
        self.missing_ids = tuple(missing_ids)


class InvalidRatio(UsageError):
    """Selection ratio outside (0, 1]."""


class TooManyMalformedLines(DataError):
    """More than the tolerated fraction of dataset lines failed to parse."""

    def __init__(self, message, malformed=()):
        super().__init__(message)
        self.malformed = tuple(malformed)


class NoScoreableSamples(DataError):
    """Every sample in the dataset failed to probe."""
