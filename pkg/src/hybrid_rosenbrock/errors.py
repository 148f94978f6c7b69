"""Exception hierarchy shared by the library and the CLI."""


class RosenbrockError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(RosenbrockError, ValueError):
    """A state vector does not match the dimension of the model."""


class NonFiniteError(RosenbrockError, ValueError):
    """An input or an intermediate result is NaN or infinite."""


class NotDecomposableError(RosenbrockError):
    """The model has no closed ancestral factorisation (Full kernel)."""


class MetricError(RosenbrockError):
    """The regularised Hessian metric could not be built at a point."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class ZeroVarianceError(RosenbrockError, ValueError):
    """A series handed to a diagnostic has zero variance."""


class DivergenceError(NonFiniteError):
    """A proposal produced a non-finite drift, coordinate or log density."""
