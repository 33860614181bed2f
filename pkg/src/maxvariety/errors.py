"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class DegenerateConfigurationError(ValueError):
    """Two ensemble members are closer than the allowed minimum separation."""

    def __init__(self, message, pairs=()):
        super().__init__(message)
        self.pairs = list(pairs)


class DynamicsAborted(RuntimeError):
    """Time stepping gave up after exhausting timestep halvings.

    ``trajectory`` holds whatever was recorded before the failure, if the
    caller was recording one.
    """

    def __init__(self, message, step=None, time=None, trajectory=None):
        super().__init__(message)
        self.step = step
        self.time = time
        self.trajectory = trajectory


class RelaxationError(RuntimeError):
    """Damped relaxation failed to reach a stationary configuration."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ResolutionError(ValueError):
    """A grid is too coarse for the requested finite-difference operation."""


class ConvergenceError(RuntimeError):
    """An iterative solver did not converge."""
