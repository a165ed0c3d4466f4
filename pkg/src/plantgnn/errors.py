"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific type that applies.
"""


class ConfigError(ValueError):
    """Bad option value, unknown config key, or inconsistent settings."""


class DataError(ValueError):
    """Unreadable or malformed input data (files, labels, shapes)."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss and was aborted."""
