"""Exception hierarchy.

Every error raised by the package derives from :class:`MMOTError`, and is
split into validation errors (bad input, CLI exit code 2) and numerical
errors (the computation itself failed, CLI exit code 3).
"""


class MMOTError(Exception):
    """Base class for all package errors."""


class ValidationError(MMOTError, ValueError):
    """Input data violates a precondition."""


class NumericalError(MMOTError, ArithmeticError):
    """A numerical routine failed to produce a usable answer."""


class InvalidBounds(ValidationError):
    pass


class EmptyGrid(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class ConvexOrderViolation(ValidationError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class Infeasible(ValidationError):
    pass


class InfeasibleLP(ValidationError):
    pass


class UnsupportedPayoff(ValidationError):
    pass


class NotConverged(NumericalError):
    pass


class TiltDiverged(NumericalError):
    pass


class RowInfeasible(NumericalError):
    pass


class NumericalOverflow(NumericalError):
    pass


class MaxItersExceeded(NumericalError):
    """Raised when the solver hits its iteration cap.

    The best state reached so far is attached so callers can inspect or
    warm-start from it.
    """

    def __init__(self, message, potentials=None, plan=None, report=None):
        super().__init__(message)
        self.potentials = potentials
        self.plan = plan
        self.report = report
