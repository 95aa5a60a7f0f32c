"""Exception hierarchy shared by every module."""


class ActTensorError(Exception):
    """Base class for all errors raised by act_tensor."""


class StructuralError(ActTensorError, ValueError):
    """Shapes, indices or coverage are inconsistent."""


class ConfigError(ActTensorError, ValueError):
    """A parameter is outside its admissible range."""


class EmptyObservationError(ActTensorError):
    """An operation needs at least one observed entry and got none."""


class UnderdeterminedError(ActTensorError):
    """Fewer observed entries than free parameters per component."""


class UndefinedMetricError(ActTensorError):
    """A metric's denominator is zero on the given inputs."""


class ParseError(ActTensorError):
    """Malformed input file. Carries file, line and column."""

    def __init__(self, path, line, column, message):
        self.path = str(path)
        self.line = line
        self.column = column
        super().__init__(f"{self.path}:{line}:{column}: {message}")
