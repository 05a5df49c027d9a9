"""Exception types raised by multimix."""


class InvalidInputError(ValueError):
    """Raised when data, parameters or configuration are malformed."""


class DegeneracyError(ArithmeticError):
    """Raised when a computation hits a numerically degenerate state.

    Examples are an observation that has zero likelihood under every
    component, or an MCMC chain whose state can no longer be evaluated.
    """


class EmptyComponentError(DegeneracyError):
    """Raised when a closed-form M-step meets a component with no mass."""

    def __init__(self, component, message=None):
        self.component = component
        super().__init__(message or f"component {component} carries no weight")
