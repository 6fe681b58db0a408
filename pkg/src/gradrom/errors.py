"""Exception hierarchy shared by the library and the command line driver."""


class GradromError(Exception):
    """Base class for all package errors."""


class ConfigError(GradromError, ValueError):
    """Invalid configuration value (mesh sizes, tolerances, penalty, ...)."""


class InputError(GradromError, ValueError):
    """Array arguments of the wrong shape or content."""


class StepFailure(GradromError, RuntimeError):
    """A Newton solve did not converge.

    ``residuals`` holds the residual norm history of the failing solve and
    ``time_level`` the index of the step being attempted, when known.
    """

    def __init__(self, message, residuals=(), time_level=None):
        super().__init__(message)
        self.residuals = list(residuals)
        self.time_level = time_level
        self.partial = None


class FormatError(GradromError, IOError):
    """A binary artifact could not be parsed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
