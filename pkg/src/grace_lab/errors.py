"""Exception hierarchy shared by every grace_lab module."""


class GraceError(Exception):
    """Base class for all library errors."""


class ConfigError(GraceError, ValueError):
    """Invalid configuration value. ``field`` names the offending key when known."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class DataError(GraceError, ValueError):
    pass


class IngestionError(DataError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ShapeError(GraceError, ValueError):
    pass


class NumericalError(GraceError, ArithmeticError):
    """Non-finite value or division by zero. ``term`` names the loss term at fault."""

    def __init__(self, message, term=None):
        super().__init__(message)
        self.term = term


class PhaseOrderError(GraceError, RuntimeError):
    pass


class StateError(GraceError, RuntimeError):
    pass


class BudgetError(GraceError, ValueError):
    pass


class ContractError(GraceError, ValueError):
    pass


class UnsupportedMeasureError(GraceError, NotImplementedError):
    pass


class RunError(GraceError, RuntimeError):
    """A phase failed during ``engine.run``; carries the 1-based task index."""

    def __init__(self, task, cause):
        super().__init__(f"task {task}: {type(cause).__name__}: {cause}")
        self.task = task
        self.cause = cause
