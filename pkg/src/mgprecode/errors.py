"""Exception hierarchy shared by every module."""


class PrecodingError(Exception):
    """Base class for all errors raised by :mod:`mgprecode`."""


class ConfigError(PrecodingError, ValueError):
    """Invalid scenario or experiment configuration."""


class NumericalError(PrecodingError, ArithmeticError):
    """A numerical routine failed (rank deficiency, non-convergence, ...)."""


class RankDeficientError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket
