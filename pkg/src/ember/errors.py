"""Exception hierarchy shared by all ember modules."""


class EmberError(Exception):
    """Base class for every error raised by ember."""


class DataError(EmberError, ValueError):
    """Malformed or inconsistent input data."""

    def __init__(self, message, *, line=None, field=None):
        self.line = line
        self.field = field
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateKeyError(DataError):
    pass


class OrphanEventError(DataError):
    pass


class CountMismatchError(DataError):
    pass


class MeshError(EmberError, ValueError):
    pass


class NotPositiveDefiniteError(EmberError, ArithmeticError):
    pass


class FitError(EmberError, RuntimeError):
    """Optimisation or estimation failure. ``stage`` names the pipeline step."""

    def __init__(self, message, stage=None):
        self.stage = stage
        if stage:
            message = f"[{stage}] {message}"
        super().__init__(message)


class ConvergenceError(FitError):
    pass


class DegenerateDataError(FitError):
    pass


class ModelSpecError(EmberError, ValueError):
    pass


class ConfigError(EmberError, ValueError):
    pass
