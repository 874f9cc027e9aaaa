"""Exception hierarchy shared by all pertflow modules."""


class PertFlowError(Exception):
    """Base class for every error raised by pertflow."""


class DimensionError(PertFlowError, ValueError):
    pass


class ConfigurationError(PertFlowError, ValueError):
    pass


class PreconditionError(PertFlowError, RuntimeError):
    pass


class EvaluationError(PertFlowError, RuntimeError):
    pass


class NumericalError(PertFlowError, ArithmeticError):
    """Raised when an iterative solver or a training step produces non-finite values."""

    def __init__(self, message, residual=None, step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step


class DataError(PertFlowError, ValueError):
    pass


class SplitError(DataError):
    def __init__(self, message, offending=()):
        super().__init__(message)
        self.offending = list(offending)


class VocabularyError(PertFlowError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class CoverageError(PertFlowError, ValueError):
    pass
