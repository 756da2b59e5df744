"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, DivergenceError -> 4.
"""


class VgqaError(Exception):
    """Base class for all package errors."""


class ConfigError(VgqaError):
    """Invalid or inconsistent configuration."""


class DataError(VgqaError):
    """Invalid input data (bad shapes, non-finite values, bad files)."""


class ArchiveError(DataError):
    """Feature/checkpoint archive is missing, malformed, or incomplete."""


class GenerationError(DataError):
    """Synthetic data generation cannot satisfy its constraints."""


class DivergenceError(VgqaError):
    """Training produced a non-finite loss."""
