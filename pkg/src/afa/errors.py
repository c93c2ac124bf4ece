"""Exception types shared across the package."""


class DataError(ValueError):
    """Malformed input data (CSV parse failures, bad labels, shape mismatches)."""


class ConfigError(ValueError):
    """Invalid experiment or model configuration."""


class TrainingError(RuntimeError):
    """Training diverged or produced non-finite quantities."""
