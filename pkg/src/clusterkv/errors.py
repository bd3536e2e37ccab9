"""Exception hierarchy shared by every clusterkv module."""


class ClusterKVError(Exception):
    """Base class for all errors raised by clusterkv."""


class DegenerateVector(ClusterKVError, ValueError):
    pass


class DimMismatch(ClusterKVError, ValueError):
    pass


class EmptyCluster(ClusterKVError, ValueError):
    pass


class EmptyInput(ClusterKVError, ValueError):
    pass


class TooFewPoints(ClusterKVError, ValueError):
    pass


class BadLayer(ClusterKVError, IndexError):
    pass


class UnknownCluster(ClusterKVError, KeyError):
    pass


class EmptyIndex(ClusterKVError, RuntimeError):
    pass


class ConfigInfeasible(ClusterKVError, ValueError):
    pass


class InvariantViolation(ClusterKVError, AssertionError):
    """Raised when a structural or accounting invariant does not hold."""


class ParseError(ClusterKVError, ValueError):
    """Malformed trace or snapshot file.

    Attributes:
        line: 1-based line number where parsing failed (0 if unknown).
    """

    def __init__(self, message: str, line: int = 0):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line
