"""Exception types shared across the package."""


class PowertailError(Exception):
    """Base class for all package errors."""


class DomainError(PowertailError, ValueError):
    """An argument lies outside the domain of a function."""


class RangeError(PowertailError, ValueError):
    """A target value lies outside the range of the function being inverted."""


class ConfigError(PowertailError, ValueError):
    """Inconsistent configuration, e.g. a bound variant used with the wrong model."""


class NumericalError(PowertailError, ArithmeticError):
    """A numerical routine failed to converge or produced non-finite values."""
