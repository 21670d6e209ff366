"""Exception hierarchy shared by every module."""


class LtnZslError(Exception):
    """Base class for all errors raised by the package."""


class DimensionError(LtnZslError, ValueError):
    pass


class ParameterError(LtnZslError, ValueError):
    pass


class DomainError(LtnZslError, ValueError):
    """A truth value fell outside [0, 1]."""


class UsageError(LtnZslError, RuntimeError):
    pass


class ConfigurationError(LtnZslError, ValueError):
    pass


class DataError(LtnZslError, ValueError):
    pass


class MissingFileError(DataError, FileNotFoundError):
    pass


class ShapeError(DataError):
    pass


class LabelError(DataError):
    pass


class GenerationError(LtnZslError, RuntimeError):
    pass


class DivergenceError(LtnZslError, RuntimeError):
    """Training produced a non-finite loss.

    ``checkpoint`` holds the parameters of the last completed epoch and
    ``history`` the records up to that point.
    """

    def __init__(self, message, checkpoint=None, history=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.history = history


class ParseError(LtnZslError, ValueError):
    """Syntax error in axiom text, positioned at 1-based ``line``/``col``."""

    def __init__(self, message, line=None, col=None):
        self.line = line
        self.col = col
        where = f"line {line}, col {col}: " if line is not None else ""
        super().__init__(where + message)
