"""Exception types shared across the package.

The CLI maps :class:`InputError` to exit code 2 and :class:`NumericalError`
to exit code 3.
"""


class EvDecompError(Exception):
    """Base class for all package errors."""


class InputError(EvDecompError, ValueError):
    """Malformed or inconsistent input (shapes, ranges, file contents)."""


class NumericalError(EvDecompError, ArithmeticError):
    """A computation produced non-finite values or could not be solved."""
