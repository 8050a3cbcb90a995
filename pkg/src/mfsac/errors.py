"""Exception hierarchy shared by every module."""


class MfsacError(Exception):
    """Base class for all package errors."""


class NotStabilizable(MfsacError):
    pass


class IllConditioned(MfsacError):
    pass


class NotHurwitz(MfsacError):
    pass


class NonFinite(MfsacError):
    pass


class NotDecaying(MfsacError):
    pass


class InvalidSpec(MfsacError):
    pass


class ProjectionFailed(MfsacError):
    pass


class OutOfSupport(MfsacError):
    pass


class RiccatiFailure(MfsacError):
    pass


class ContractionViolated(MfsacError):
    pass


class MaxIterations(MfsacError):
    pass


class SingularBhat(MfsacError):
    pass


class EmptyObservation(MfsacError):
    pass


class StaleEstimates(MfsacError):
    pass


class GridMismatch(MfsacError):
    pass


class MissingRun(MfsacError):
    pass


class ConfigError(MfsacError):
    pass
