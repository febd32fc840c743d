"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2,
numerical aborts exit 3, data/file problems exit 4.
"""


class InputError(ValueError):
    """An operation received arguments that violate its contract."""


class ConfigError(ValueError):
    """A configuration value or combination of values is invalid."""


class NumericalError(RuntimeError):
    """Training produced non-finite values."""


class ParseError(ValueError):
    """A data file could not be parsed; message carries the line number."""
