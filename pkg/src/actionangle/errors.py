"""Exception hierarchy shared by all subpackages."""

from __future__ import annotations


class ActionAngleError(Exception):
    """Base class for every error raised by :mod:`actionangle`."""


class ExpressionError(ActionAngleError, ValueError):
    """Malformed observable text.

    ``offset`` is the byte offset into the UTF-8 encoded source at which the
    problem was detected.
    """

    def __init__(self, message: str, offset: int = 0, text: str = ""):
        self.offset = offset
        self.text = text
        super().__init__(f"{message} (at byte {offset})")


class UnknownIdentifierError(ExpressionError):
    pass


class NonRationalExponentError(ExpressionError):
    pass


class SingularityError(ActionAngleError, ArithmeticError):
    """Evaluation produced a non-finite value (r = 0, sqrt of a negative, ...).

    During integration ``last_state`` holds the last finite state and
    ``partial`` the trajectory computed so far, when available.
    """

    def __init__(self, message: str, last_state=None, last_time=None, partial=None):
        self.last_state = last_state
        self.last_time = last_time
        self.partial = partial
        super().__init__(message)


class ConvergenceError(ActionAngleError):
    def __init__(self, message: str, iterate=None):
        self.iterate = iterate
        super().__init__(message)


class RegimeError(ActionAngleError, ValueError):
    """Point lies in the excluded set or in the wrong regime for the operation."""


class ChartBoundaryError(ActionAngleError, ValueError):
    """Point lies on the boundary of an action-angle chart."""


class ConfigError(ActionAngleError, ValueError):
    pass


class GridResolutionError(ActionAngleError, ValueError):
    pass
