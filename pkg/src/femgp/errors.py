"""Exception hierarchy shared across the package."""


class FemGPError(Exception):
    """Base class for all package errors."""


class DomainError(FemGPError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class ParameterError(FemGPError, ValueError):
    pass


class AssemblyError(FemGPError):
    pass


class ResourceError(FemGPError):
    """A requested size exceeds a configured cap."""


class RangeError(FemGPError, IndexError):
    pass


class CouplingError(FemGPError):
    """Coefficients required to couple two fields are unavailable."""


class ConditioningError(FemGPError):
    """A factorization failed because the matrix is not numerically SPD."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class IterationError(FemGPError):
    def __init__(self, message, grad_norm=None):
        super().__init__(message)
        self.grad_norm = grad_norm


class StepError(FemGPError):
    pass


class UnsupportedError(FemGPError):
    pass


class InsufficientDataError(FemGPError):
    pass


class InconclusiveError(FemGPError):
    """A Monte Carlo estimate is too noisy to support a verdict."""


class ConfigError(FemGPError):
    pass
