"""Exception hierarchy shared by all modules."""


class WaldenfelsError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(WaldenfelsError, ValueError):
    """Inconsistent or malformed problem description."""


class DomainError(ConfigurationError):
    """A parameter lies outside its admissible range (e.g. alpha not in (0, 2))."""


class ResolutionError(ConfigurationError):
    """The grid is too coarse for the requested domain."""


class QuadratureError(ConfigurationError):
    """Quadrature parameters incompatible with the grid."""


class UnsupportedKernelError(WaldenfelsError, NotImplementedError):
    """The kernel kind (or state dependence) is not supported by this routine."""


class ShapeMismatchError(WaldenfelsError, ValueError):
    """A field does not live on the grid of the operator it is applied with."""


class SolverError(WaldenfelsError, RuntimeError):
    """A linear solve did not reach the residual contract."""

    def __init__(self, message, residual_history=()):
        super().__init__(message)
        self.residual_history = list(residual_history)


class NonUniqueSolutionError(SolverError):
    """The discrete operator is singular: some interior block never leaks to the exterior."""
