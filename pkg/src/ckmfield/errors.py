"""Exception types shared across the package."""


class CkmError(Exception):
    """Base class for all package errors."""


class DimensionError(CkmError, ValueError):
    """Array shapes do not line up; the message names the offending axis."""


class ConfigError(CkmError, ValueError):
    """A configuration value is outside its valid range."""


class DomainError(CkmError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericalError(CkmError, ArithmeticError):
    """A numerical procedure failed (non-convergence, NaN, ...)."""


class FormatError(CkmError, ValueError):
    """A file does not follow the expected container layout."""
