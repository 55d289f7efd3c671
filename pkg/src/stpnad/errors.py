"""Exception hierarchy shared by the library and the command line."""


class StpnadError(Exception):
    """Base class for all errors raised by this package."""


class DataError(StpnadError, ValueError):
    """Input data is malformed, too short, or inconsistent with a model."""


class ConfigError(StpnadError, ValueError):
    """A configuration value is missing or outside its allowed range."""


class ModelError(StpnadError, RuntimeError):
    """A model is used before it is ready (e.g. uncalibrated thresholds)."""
