"""Exception hierarchy shared by all modules."""


class AccompanyError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(AccompanyError, ValueError):
    pass


# scheme validation
class InvalidScheme(AccompanyError, ValueError):
    pass


class SupportViolation(InvalidScheme):
    pass


class MeanViolation(InvalidScheme):
    pass


class WeightViolation(InvalidScheme):
    pass


# law construction
class NonPSDCovariance(AccompanyError, ValueError):
    pass


class SpectralSupportViolation(AccompanyError, ValueError):
    pass


class MomentMismatch(AccompanyError, ValueError):
    def __init__(self, message, expected=None, found=None):
        super().__init__(message)
        self.expected = expected
        self.found = found


class GaussianNotExact(AccompanyError, ValueError):
    pass


class SupportExplosion(AccompanyError, RuntimeError):
    pass


# geometry
class ZeroNormal(AccompanyError, ValueError):
    pass


class NegativeLambda(AccompanyError, ValueError):
    pass


class NonConvergence(AccompanyError, RuntimeError):
    pass


class UnsupportedDimension(AccompanyError, ValueError):
    pass


class DegenerateInput(AccompanyError, ValueError):
    pass


# metrics
class EmptyMeasure(AccompanyError, ValueError):
    pass


class EmptyFamily(AccompanyError, ValueError):
    pass


class NonMonotoneDetected(AccompanyError, AssertionError):
    pass


# projection
class ZeroDirection(AccompanyError, ValueError):
    pass
