"""Exception types raised across the package."""


class HycopError(Exception):
    """Base class for all package errors."""


class BoundaryUnsupported(HycopError):
    """Operation needs a periodic grid but got a wall-bounded one."""


class InvalidDuration(HycopError, ValueError):
    pass


class StateShapeError(HycopError, ValueError):
    pass


class StiffnessCap(HycopError):
    """A primitive would need more substeps than the hard cap allows."""


class OrderUnmeasurable(HycopError):
    """Errors sit below the floating-point floor, so no order can be fit."""


class BoundarySwapUnsupported(HycopError):
    pass


class ReferenceDiverged(HycopError):
    pass


class PolicyNumericalError(HycopError):
    pass


class ParamShapeError(HycopError, ValueError):
    pass


class ExecutionDiverged(HycopError):
    """A program blew up; ``step`` is the zero-based index of the offending step."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class TrainingStalled(UserWarning):
    """Every particle in a generation diverged."""


class InsufficientTrajectory(HycopError):
    pass


class UnknownIcFamily(HycopError, KeyError):
    pass


class ConfigError(HycopError):
    def __init__(self, message, field=None, line=None):
        self.reason = message
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.field = field
        self.line = line
