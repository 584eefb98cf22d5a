"""Exception types shared across the package."""


class RCGPError(Exception):
    """Base class for all errors raised by :mod:`rcgp`."""


class InputError(RCGPError, ValueError):
    """Invalid user input: shapes, ranges, malformed files."""


class NumericalError(RCGPError, ArithmeticError):
    """A factorisation or other numerical routine failed."""
