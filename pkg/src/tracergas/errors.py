"""Exception taxonomy shared by all modules."""


class SimulationError(Exception):
    """Base class for every error raised by this package."""


class StructuralError(SimulationError):
    """Shape, grid, size, or schema mismatch between objects that must agree."""


class ValidationError(SimulationError):
    """Input violates a documented precondition (unnormalized state, bad config)."""


class NumericalError(SimulationError):
    """An iterative or time-stepping procedure failed its accuracy contract."""

    def __init__(self, message, last_value=None, residual=None):
        super().__init__(message)
        self.last_value = last_value
        self.residual = residual


class ValidityError(SimulationError):
    """The run left the regime where the periodic-box discretization is trustworthy."""
