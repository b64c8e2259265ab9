"""Exception types shared by all pipeline stages."""


class PeelSortError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PeelSortError):
    """Invalid or unknown configuration (CLI exit code 2)."""


class ParameterError(PeelSortError, ValueError):
    """A function was called with arguments violating its contract (exit code 2)."""


class DataFormatError(PeelSortError):
    """Unreadable or inconsistent input data: bad binary layout, truncated
    gzip stream, NaN/Inf samples, mismatched channel lengths, or a catalogue
    that does not parse or does not match the recording (exit code 3)."""


class DegenerateDataError(PeelSortError):
    """Data that is structurally valid but numerically unusable for the
    requested operation: zero-MAD channel, flat template, no signal above
    the noise floor, empty event sample, too few events in a cluster
    (exit code 4)."""
