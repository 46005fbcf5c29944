"""
Exception hierarchy for the edge caching lab.

Management commands map ConfigError to exit code 2 and every other
EdgeCacheError to exit code 3.
"""


class EdgeCacheError(Exception):
    """Base class for all domain errors."""


class InvalidParameterError(EdgeCacheError, ValueError):
    """A parameter is outside its documented domain."""


class InvalidActionError(InvalidParameterError):
    """An action index outside 0..C."""


class ContractViolationError(EdgeCacheError):
    """A caller broke an operation's precondition."""


class UndefinedMetricError(EdgeCacheError):
    """A metric was requested over no data."""


class ShapeError(EdgeCacheError, ValueError):
    """Array dimensions do not chain."""


class InsufficientDataError(EdgeCacheError):
    """A trace is too short for the requested evaluation."""


class CalibrationError(EdgeCacheError):
    """No Zipf exponent in range reaches the requested effective-contents share."""

    def __init__(self, message, closest_s=None, closest_value=None):
        super().__init__(message)
        self.closest_s = closest_s
        self.closest_value = closest_value


class TrainingDivergenceError(EdgeCacheError):
    """A loss or parameter became non-finite during SAC updates."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class IncompatibleCheckpointError(EdgeCacheError):
    """A checkpoint's format version or dimensions do not match the caller."""


class ConfigError(EdgeCacheError):
    """An experiment config failed validation."""

    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line

    def __str__(self):
        message = super().__str__()
        if self.field and self.line:
            return f"{self.field} (line {self.line}): {message}"
        if self.field:
            return f"{self.field}: {message}"
        return message
