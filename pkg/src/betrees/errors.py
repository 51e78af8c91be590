"""Exception types shared across the package."""


class BetreesError(Exception):
    """Base class for all errors raised by this package."""


class DataError(BetreesError):
    """Malformed or insufficient input data (bad CSV cell, too few rows, ...)."""


class ConfigError(BetreesError):
    """Invalid hyperparameter or chain configuration."""


class UsageError(BetreesError):
    """Bad command-line invocation; maps to exit code 2."""


class InvalidLeafError(BetreesError):
    """A leaf violates the minimum-count requirement for its marginal likelihood."""
