"""Exception hierarchy shared across the harness.

Exit-code mapping used by the CLI: ConfigError/UsageError -> 2,
DataError -> 3, everything else (incl. NumericError) -> 1.
"""


class DaylearnError(Exception):
    """Base class for all harness errors."""


class ConfigError(DaylearnError):
    """Invalid configuration: bad key, bad value, inconsistent model."""


class UsageError(DaylearnError):
    """API misuse: empty batch, series shorter than window, etc."""


class DataError(DaylearnError):
    """Bad input data: malformed file, out-of-range label, missing class."""


class NumericError(DaylearnError):
    """Non-finite value encountered; the offending step is aborted."""


class CheckpointError(DaylearnError):
    """Corrupt or truncated checkpoint file."""
