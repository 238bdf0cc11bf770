"""Exception hierarchy shared across the package."""


class CorporeaError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(CorporeaError, ValueError):
    """Raised for invalid arguments, configs, or malformed input files."""


class NumericalError(CorporeaError, ArithmeticError):
    """Raised when a numerical procedure fails (factorization, divergence)."""
