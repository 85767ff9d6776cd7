"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or insufficient configuration (grids, schedules, scenario files)."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class EvaluationError(ArithmeticError):
    """A user-supplied function returned a non-finite value."""


class NumericError(ArithmeticError):
    """Quadrature or another numerical routine missed its tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class UnsupportedError(NotImplementedError):
    """The operation is not defined for this kind of model."""


class AssignmentError(ValueError):
    """Some ball centers are not covered by the supplied cubes."""

    def __init__(self, message, strays=()):
        super().__init__(message)
        self.strays = list(strays)


class HorizonError(RuntimeError):
    """Too many simulated paths were censored by the time horizon."""


class PrecisionError(RuntimeError):
    """Monte Carlo noise is too large for the requested conclusion."""


class VersionError(ValueError):
    """Two run manifests use incompatible schema versions."""
