"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes are inconsistent."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation (e.g. R not positive definite)."""


class ConvergenceError(RuntimeError):
    """An iterative routine failed to converge."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NonTerminationError(RuntimeError):
    """The invariant-set iteration exceeded its step budget."""


class InfeasibleTargetError(RuntimeError):
    """The target-selection problem has no solution for the requested reference."""
