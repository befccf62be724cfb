"""Exception hierarchy shared by all modules."""


class KummerError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(KummerError, ValueError):
    pass


class ShapeError(KummerError, ValueError):
    pass


class DomainError(KummerError, ValueError):
    pass


class InvalidSpectrumError(DomainError):
    pass


class UnsupportedIndexError(KummerError, ValueError):
    pass


class AliasingError(KummerError):
    pass


class SingularChartError(DomainError):
    pass


class PositivityError(KummerError):
    """A Hermitian form that must be positive is not.

    ``margin`` is the smallest eigenvalue found and ``where`` locates it.
    """

    def __init__(self, message, margin=None, where=None):
        super().__init__(message)
        self.margin = margin
        self.where = where


class RTooSmallError(PositivityError):
    pass


class ResolutionError(KummerError):
    pass


class OutOfBandError(DomainError):
    pass


class IllConditionedKernelError(KummerError):
    pass


class UnsupportedKernelError(KummerError):
    pass


class NonEmptyKernelError(KummerError):
    pass


class NeumannDivergenceError(KummerError):
    def __init__(self, message, defect_norm):
        super().__init__(message)
        self.defect_norm = defect_norm


class DivergenceError(KummerError):
    def __init__(self, message, R=None, ratio=None, report=None):
        super().__init__(message)
        self.R = R
        self.ratio = ratio
        self.report = report


class NonConvergenceError(KummerError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
