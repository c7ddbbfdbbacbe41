"""Exception types raised across the package."""

from __future__ import annotations


class InvalidInputError(ValueError):
    """Input violates a documented precondition (shape, symmetry, range)."""


class NotPositiveDefiniteError(InvalidInputError):
    pass


class DomainError(ValueError):
    """Argument outside the mathematical domain of a special function."""


class MomentUndefinedError(DomainError):
    pass


class SingularityError(ArithmeticError):
    """Evaluation hit a pole, e.g. a zero-norm sample under Tyler weights."""


class NumericalRankError(ArithmeticError):
    """Matrix too ill-conditioned to invert reliably."""


class DegenerateDataError(InvalidInputError):
    pass


class ConvergenceError(RuntimeError):
    """Fixed-point iteration did not converge.

    Carries the last iterate and its relative residual so callers can
    decide whether the result is still usable.
    """

    def __init__(self, message, last_iterate=None, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual
        self.iterations = iterations
