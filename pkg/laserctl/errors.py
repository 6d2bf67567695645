"""Exception hierarchy shared by every laserctl module."""


class LaserCtlError(Exception):
    """Base class for toolkit errors."""


class GridMismatchError(LaserCtlError):
    """Two objects live on different angular or time grids."""


class DomainError(LaserCtlError):
    """An argument lies outside the domain of a function (e.g. a pole)."""


class NormalizationError(LaserCtlError, UserWarning):
    """A state expected to be normalized is not (warning level)."""

    def __init__(self, message, norm=None):
        super().__init__(message)
        self.norm = norm


class CalibrationError(LaserCtlError):
    """The surface is not calibrated or the calibration failed."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConvergenceError(LaserCtlError):
    """An iterative solver hit its cap; ``partial`` carries what converged."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial or []


class MemoryGuardError(LaserCtlError):
    """A dense or stored quantity would exceed the configured memory budget."""


class MonotonicityError(LaserCtlError):
    """The optimal-control objective decreased between iterations."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


class SchemeError(LaserCtlError):
    """A pulse scheme cannot be built from the given model or parameters."""


class ConfigError(LaserCtlError):
    """Scenario configuration is malformed; ``lineno`` points at the culprit."""

    def __init__(self, message, lineno=None, path=None):
        location = ''
        if path is not None:
            location = f'{path}:{lineno}: ' if lineno is not None else f'{path}: '
        elif lineno is not None:
            location = f'line {lineno}: '
        super().__init__(location + message)
        self.lineno = lineno
        self.path = path
