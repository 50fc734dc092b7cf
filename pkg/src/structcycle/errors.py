"""Exception types shared across the package. The CLI maps each to an exit code."""


class ConfigError(ValueError):
    """Invalid configuration value or incompatible settings."""


class DataError(RuntimeError):
    """Missing, malformed, or unreadable data on disk."""


class NoReferenceError(DataError):
    """Evaluation was requested but no paired reference images exist."""

    def __init__(self, msg="no reference: dataset has no paired evaluation images"):
        super().__init__(msg)


class NumericError(RuntimeError):
    """A training loss became non-finite."""


class CheckpointError(RuntimeError):
    """Corrupt, missing, or mismatched checkpoint archive."""
