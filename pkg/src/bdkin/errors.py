"""Exception hierarchy shared by all bdkin modules."""

from __future__ import annotations


class BDKinError(Exception):
    """Base class for every error raised by bdkin."""


class RangeError(BDKinError, ValueError):
    """An index or argument lies outside its admissible range."""


class InvariantError(BDKinError, ValueError):
    """Input data break a structural invariant (sign, monotonicity)."""


class InvalidParameterError(BDKinError, ValueError):
    """A model or algorithm parameter is outside its admissible range."""


class SupersaturationError(InvalidParameterError):
    """Requested standard-model equilibrium lies beyond the saturation activity."""


class DivergenceError(BDKinError, ArithmeticError):
    """A power series diverges at the requested argument."""


class NoEquilibriumError(BDKinError):
    """Equilibrium requested for a ladder without one."""


class MisuseError(BDKinError):
    """Operation called in a regime where it is not defined."""


class NumericError(BDKinError, ArithmeticError):
    """A numerical procedure failed to meet its tolerance."""


class UndefinedLambdaError(BDKinError, ArithmeticError):
    """The free-atom fraction z_1/N is undefined because N = 0."""


class StiffnessError(NumericError):
    """Adaptive step size fell below the configured minimum.

    The partially integrated trajectory is kept on ``trajectory``.
    """

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class PositivityError(NumericError):
    """Negative entries persisted after the clamping budget was spent."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory
