"""Exception taxonomy shared across the package.

The CLI maps these onto distinct exit codes, so raise the most specific
one that applies.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (bad key, bad block sizes, ...)."""


class DataError(ValueError):
    """Malformed or out-of-range input data."""


class CheckpointError(RuntimeError):
    """Checkpoint file unreadable or incompatible with the requested config."""
