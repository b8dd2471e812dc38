"""Exception types raised by the package."""


class ScenarioError(ValueError):
    """A scenario file or scenario object violates a structural invariant."""


class DegenerateChannelError(ArithmeticError):
    """A channel estimate is too degenerate to build a precoder from."""


class FixedPointError(RuntimeError):
    """The Stieltjes fixed-point iteration did not reach its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class SingularSystemError(ArithmeticError):
    """The K x K linear system defining a trace functional is singular."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class PowerConstraintError(ValueError):
    """Power scalings do not satisfy the asymptotic sum power constraint."""


class SpecializationError(ValueError):
    """A scenario does not satisfy the assumptions of a closed-form case."""


class OptimizationError(RuntimeError):
    """An optimizer met a non-finite objective or another hard failure."""
