"""Exception hierarchy shared across the package.

CLI exit codes: ConfigError -> 2, DataError -> 3, NumericalFailure -> 4.
"""


class DaiqaError(Exception):
    """Base class for all package errors."""


class ConfigError(DaiqaError):
    """Bad configuration: unknown keys, out-of-range values, mismatched checkpoints."""


class DataError(DaiqaError):
    """Bad or missing data: empty directories, unreadable manifests, unlabeled records."""


class NumericalFailure(DaiqaError):
    """Non-finite losses or failed numerical procedures."""
