"""Exception hierarchy.

Every error raised by the package derives from :class:`PolcamError`. The
three top-level categories map onto the CLI exit codes.
"""


class PolcamError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(PolcamError, ValueError):
    """Malformed configuration, unknown key or bad override (exit 2)."""

    exit_code = 2


class FileFormatError(PolcamError, IOError):
    """A data file could not be read or is not well formed (exit 3)."""

    exit_code = 3


class BadMagicError(FileFormatError):
    pass


class TruncatedFileError(FileFormatError):
    def __init__(self, message, offset):
        super().__init__(message)
        self.offset = offset


class UnsortedEventsError(FileFormatError):
    pass


class OutOfBoundsError(FileFormatError):
    pass


class CountMismatchError(FileFormatError):
    pass


class CorruptRecordError(FileFormatError):
    """A record field holds a value the format does not allow (bad polarity, nonzero reserved bytes)."""


class DomainError(PolcamError, ValueError):
    """Input outside the mathematical or physical domain (exit 4)."""

    exit_code = 4


class UndefinedAoPError(DomainError):
    """AoP requested for unpolarized light (s1 = s2 = 0)."""


class UndefinedDoLPError(DomainError):
    """DoLP requested for an unexposed pixel (s0 <= 0)."""


class SimulationDomainError(DomainError):
    """Stimulus produced non-positive flux where a logarithm is needed."""


class OrderingError(DomainError):
    """An event arrived with a timestamp older than the pixel state."""


class MissingInputError(DomainError):
    """A reconstruction method was asked to run without the data it needs."""
