"""Exception types shared across the package."""


class NumericError(RuntimeError):
    """A numerical operation failed (singular covariance, non-PSD matrix, ...)."""


class IllPosedError(ValueError):
    """Too little data (or degenerate data) for a well-defined estimate."""


class ConfigError(ValueError):
    """A run configuration is missing a field or holds an invalid value."""
