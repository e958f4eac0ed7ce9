class ConfigError(ValueError):
    """Invalid configuration value or incompatible settings."""


class DataError(ValueError):
    """Malformed input data (CSV rows, masks, image containers)."""
