"""Exception types raised across the package."""


class StreamlipError(Exception):
    """Base class for all package errors."""


class DimensionError(StreamlipError, ValueError):
    pass


class NumericError(StreamlipError, ArithmeticError):
    pass


class DomainError(StreamlipError, ValueError):
    pass


class ModeError(StreamlipError, ValueError):
    pass


class StateError(StreamlipError, ValueError):
    pass


class InputError(StreamlipError, ValueError):
    pass


class InfeasibleError(StreamlipError, ValueError):
    """A loss was asked for a target that no alignment path can produce."""


class DataError(StreamlipError, ValueError):
    pass


class SpecError(StreamlipError, ValueError):
    pass


class UndefinedMetricError(StreamlipError, ValueError):
    """Error rate with no reference tokens, or latency with no emitted tokens."""


class TrainingError(StreamlipError, RuntimeError):
    def __init__(self, message: str, stage: str | None = None, step: int | None = None):
        super().__init__(message)
        self.stage = stage
        self.step = step


class FormatError(StreamlipError, ValueError):
    """Malformed corpus or checkpoint file."""
