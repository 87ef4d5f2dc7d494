"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or unsupported parameter combination."""


class SchemeError(ConfigError):
    """Operation requested from a derivative scheme that cannot provide it."""


class NumericalFailure(RuntimeError):
    """A run produced non-finite values or otherwise broke down."""
