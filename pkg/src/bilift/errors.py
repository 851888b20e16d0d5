"""Exception types shared across the package."""


class BiliftError(Exception):
    """Base class for all package errors."""


class NonMonotoneSchedule(BiliftError):
    """A coefficient radicand went negative, i.e. the p/q ordering is invalid."""


class DimensionMismatch(BiliftError):
    pass


class EmptyDimension(BiliftError):
    pass


class DegenerateM(BiliftError):
    """An interior m entry used as a divisor is not strictly positive."""


class UnsupportedFunctional(BiliftError):
    pass


class MeasureLevelMismatch(BiliftError):
    pass


class IndexOutOfRange(BiliftError):
    pass


class InfeasiblePerturbation(BiliftError):
    """A finite-difference step would leave the feasible schedule set."""


class DimensionTooLarge(BiliftError):
    """Total Gaussian dimension exceeds what the quadrature backend supports."""


class ConstantMagnitudeRequired(BiliftError):
    pass


class UnitNormRequired(BiliftError):
    pass


class NoConvergence(BiliftError):
    """Solver did not reach tolerance; carries the best iterate and a trace."""

    def __init__(self, message, best=None, trace=None):
        super().__init__(message)
        self.best = best
        self.trace = trace or []


class ConfigError(BiliftError):
    pass
