"""Exception types raised across the package."""


class RandTransError(Exception):
    """Base class for all package errors."""


class ConfigError(RandTransError, ValueError):
    """Invalid configuration or violated parameter constraint."""


class OrbitOverflowError(RandTransError, ValueError):
    pass


class PoleError(RandTransError, ValueError):
    pass


class OmittedValueError(RandTransError, ValueError):
    pass


class EmptyRangeError(RandTransError, ValueError):
    pass


class SingularValueError(RandTransError, ValueError):
    pass


class BranchMismatchError(RandTransError, ValueError):
    pass


class InsufficientSamplesError(RandTransError, ValueError):
    pass


class NoCandidateError(RandTransError, ValueError):
    pass


class EmptyCloudError(RandTransError, ValueError):
    pass


class DivergenceError(RandTransError, ValueError):
    pass


class QuadratureError(RandTransError, RuntimeError):
    pass


class HypothesisError(RandTransError, ValueError):
    """A hypothesis of a value-distribution theorem fails for the inputs."""


class FitError(RandTransError, ValueError):
    pass


class ZeroNormalizerError(RandTransError, ZeroDivisionError):
    pass


class DegenerateDensityError(RandTransError, ValueError):
    pass
