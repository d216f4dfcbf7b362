"""Exception hierarchy shared by every shiftlab module."""


class ShiftLabError(Exception):
    """Base class for all errors raised by shiftlab."""


class InvalidInputError(ShiftLabError, ValueError):
    """An argument violates an operation's contract."""


class SolverFailureError(ShiftLabError, RuntimeError):
    """A root finder did not converge within its iteration cap.

    Attributes
    ----------
    bracket : tuple of float
        The last bracket ``(lo, hi)`` examined by the solver.
    """

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class SingularVarianceError(ShiftLabError, ValueError):
    """A weight equal to one maps to an infinite prior variance."""


class DegenerateEstimateError(ShiftLabError, ArithmeticError):
    """A ratio estimator hit a nonpositive denominator.

    Attributes
    ----------
    raw : float
        The unclamped ratio (``+-inf`` or ``nan`` when the denominator is 0).
    """

    def __init__(self, message, raw=float("nan")):
        super().__init__(message)
        self.raw = raw
