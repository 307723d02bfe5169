"""Exception hierarchy shared by all stages."""


class BdcError(Exception):
    """Base class for every error raised by this package."""


class NumericError(BdcError):
    """A numerical stage could not produce a valid result."""


class ConfigError(BdcError):
    """Malformed or inconsistent configuration / parameter file."""


# motor_model
class NoConvergence(NumericError):
    pass


class InfeasibleTarget(NumericError):
    pass


# simulator
class UnstableStep(NumericError):
    pass


class NonFinite(NumericError):
    pass


class EmptyDataset(NumericError):
    pass


# cfnn / estimator
class DimensionMismatch(BdcError, ValueError):
    pass


class GridMismatch(BdcError, ValueError):
    pass


# bfgs
class CurvatureViolation(NumericError):
    pass


class SingularDenominator(NumericError):
    pass


class NotPositiveDefinite(NumericError):
    pass


class NotDescent(NumericError):
    pass


class LineSearchFailed(NumericError):
    """Raised when no step satisfying the strong Wolfe conditions was found.

    ``result`` carries the best point reached so far when raised from
    :func:`bdc_estimator.bfgs.minimize`.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
