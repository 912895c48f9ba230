"""Exception types shared across the package."""


class GenflowError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GenflowError, ValueError):
    """A parameter, grid or config file violates a precondition."""


class DomainError(GenflowError, ValueError):
    """A function was evaluated outside its domain."""


class InputError(GenflowError, ValueError):
    """Malformed input data (negative samples, too few points, ...)."""


class ConstructionError(GenflowError):
    """A kernel could not be constructed (e.g. normalization failed)."""


class UsageError(GenflowError, ValueError):
    """Objects from incompatible spaces were combined."""


class IntegrationError(GenflowError):
    """The ODE integrator failed; carries the regularization parameter and time."""

    def __init__(self, message, eps=None, t=None, point=None):
        super().__init__(message)
        self.eps = eps
        self.t = t
        self.point = point

    def context(self) -> dict:
        point = None if self.point is None else [float(x) for x in self.point]
        return {"eps": self.eps, "t": self.t, "point": point}


class QuadratureError(GenflowError):
    """Composite quadrature did not converge."""
