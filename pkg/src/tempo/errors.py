"""Exception types shared across the pipeline.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, DivergenceError -> 4.
"""

from __future__ import annotations


class TempoError(Exception):
    """Base class for pipeline errors."""


class ConfigError(TempoError):
    """Bad or inconsistent configuration (missing files, invalid parameters)."""


class DataError(TempoError):
    """Malformed or unusable input data, or a corrupt artifact on disk."""


class DivergenceError(TempoError):
    """Training produced a non-finite loss."""
