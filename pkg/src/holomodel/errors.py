"""Exception hierarchy shared by all modules."""


class HolomodelError(Exception):
    """Base class for every error raised by the package."""


class PointOutsideDomain(HolomodelError, ValueError):
    pass


class SingularAtBoundary(HolomodelError, ValueError):
    pass


class AmplitudeOutOfRange(HolomodelError, ValueError):
    pass


class SequenceTooShort(HolomodelError, ValueError):
    pass


class PoleHit(HolomodelError, ArithmeticError):
    pass


class DomainMismatch(HolomodelError, ValueError):
    pass


class OrbitEscapedDomain(HolomodelError, RuntimeError):
    pass


class NoConvergence(HolomodelError, RuntimeError):
    def __init__(self, message, tail=None):
        super().__init__(message)
        self.tail = tail


class NotAFixedDirection(HolomodelError, ValueError):
    pass


class NotRepelling(HolomodelError, ValueError):
    pass


class RankUnstable(HolomodelError, RuntimeError):
    pass


class ModelNotConverged(HolomodelError, RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class WrongKind(HolomodelError, ValueError):
    pass


class NewtonFailed(HolomodelError, RuntimeError):
    def __init__(self, n, message=None):
        super().__init__(message or f"no preimage found at backward step {n}")
        self.n = n


class StepUnbounded(HolomodelError, RuntimeError):
    pass


class OrbitTooShort(HolomodelError, ValueError):
    pass


class NormalFormUnavailable(HolomodelError, RuntimeError):
    pass


class ConfigError(HolomodelError, ValueError):
    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


class IoError(HolomodelError, OSError):
    def __init__(self, path, message=None):
        super().__init__(message or f"cannot write {path}")
        self.path = str(path)
