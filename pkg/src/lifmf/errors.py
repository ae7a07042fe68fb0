"""Exception hierarchy.

Validation problems (bad inputs) and numeric failures (a solver could not
produce a trustworthy answer) are kept apart so the command line can map
them to distinct exit codes.
"""


class LifError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(LifError, ValueError):
    pass


class OutOfRange(ValidationError):
    pass


class IntegerRatio(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class ZeroMass(ValidationError):
    pass


class CouplingTooLarge(ValidationError):
    pass


class ZeroCoupling(ValidationError):
    pass


class NumericError(LifError, ArithmeticError):
    pass


class CflViolation(NumericError):
    pass


class ClosureSingular(NumericError):
    pass


class NegativeDensity(NumericError):
    pass


class InsufficientData(NumericError):
    pass


class ToleranceExceeded(NumericError):
    pass


class NoRootInRange(NumericError):
    pass
