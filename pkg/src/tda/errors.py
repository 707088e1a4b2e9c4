"""Exception hierarchy. CLI exit codes are keyed off these classes."""


class TdaError(Exception):
    """Base class for all package errors."""

    exit_code = 4


class ValidationError(TdaError, ValueError):
    """Bad input: malformed files, schema violations, out-of-range parameters."""

    exit_code = 2


class DivergenceError(TdaError, ArithmeticError):
    """Training produced a non-finite loss."""

    exit_code = 4

    def __init__(self, message, epoch=None, side=None):
        super().__init__(message)
        self.epoch = epoch
        self.side = side


class ExhaustionError(TdaError):
    """No (or too few) candidate datasets passed the transformation check.

    ``trail`` holds every attempt made; ``partial`` carries whatever was
    collected before giving up (Method2 only).
    """

    exit_code = 3

    def __init__(self, message, trail=None, partial=None):
        super().__init__(message)
        self.trail = list(trail or [])
        self.partial = partial
