"""Exception types shared across the package.

Every error raised by this package derives from StatDistillError so callers
can catch library failures without swallowing unrelated bugs.
"""


class StatDistillError(Exception):
    """Base class for all errors raised by statdistill."""


class ShapeError(StatDistillError, ValueError):
    """An operand has the wrong rank or a mismatched dimension."""


class UsageError(StatDistillError, RuntimeError):
    """An API was called in a way its contract forbids."""


class StateError(StatDistillError, RuntimeError):
    """An operation needs state (e.g. running statistics) that is absent."""


class InputError(StatDistillError, ValueError):
    """An input carries invalid values (labels out of range, negatives, ...)."""


class FormatError(StatDistillError, ValueError):
    """A file or byte stream does not follow the expected format."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(StatDistillError, ValueError):
    """A configuration is invalid; collects every violated field at once."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("invalid configuration: " + "; ".join(self.violations))
