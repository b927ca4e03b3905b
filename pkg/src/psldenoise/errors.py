"""Exception types shared across the package.

The CLI maps these onto exit codes (see ``psldenoise.cli``).
"""


class PSLError(Exception):
    """Base class for package errors."""


class ConfigError(PSLError, ValueError):
    """Invalid or inconsistent configuration."""


class DataError(PSLError):
    """Unreadable, missing or malformed data on disk."""


class NumericalError(PSLError, ArithmeticError):
    """A non-finite loss or an invalid numerical state."""
