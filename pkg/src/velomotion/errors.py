"""Exception hierarchy shared by every module."""


class MotionError(Exception):
    """Base class for all library errors."""


class DegenerateSet(MotionError, ValueError):
    pass


class OutsideHull(MotionError, ValueError):
    pass


class NotMinimal(MotionError, ValueError):
    pass


class UnboundedRate(MotionError, ValueError):
    pass


class AtomicLaw(MotionError, ValueError):
    """A density was requested for a waiting-time law that has atoms."""


class InconsistentCounts(MotionError, ValueError):
    pass


class OutsideSupport(MotionError, ValueError):
    pass


class OutsideFace(MotionError, ValueError):
    pass


class AlreadyFullDim(MotionError, ValueError):
    pass


class BoundaryTooClose(MotionError, ValueError):
    pass


class ConditionViolated(MotionError, ValueError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class ConvergenceError(MotionError, RuntimeError):
    pass


class ConfigError(MotionError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message
