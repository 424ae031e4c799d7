"""Exception hierarchy shared by every module."""


class SerocsError(Exception):
    """Base class for all library errors."""


class InputDomainError(SerocsError, ValueError):
    """Input outside the domain an operation accepts (shape, finiteness, range)."""


class DegenerateInputError(SerocsError, ValueError):
    """Input is well-formed but numerically degenerate (e.g. rank deficient)."""


class NumericalError(SerocsError, ArithmeticError):
    """A numerical routine failed (singular system, non-convergence with context)."""


class StateError(SerocsError, RuntimeError):
    """Object used before it is ready (e.g. classifier not trained)."""


class PlanningError(SerocsError):
    """The trajectory optimizer could not produce a feasible plan."""

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}
