"""Toolkit-wide error classes, mapped to CLI exit codes in cli.py."""


class SdrsynthError(Exception):
    """Base class for toolkit errors."""


class ConfigError(SdrsynthError):
    """Malformed or inconsistent configuration / model description."""


class UsageError(SdrsynthError):
    """Operation invoked on inputs it does not support (e.g. wrong dimension)."""


class InfeasibleProblem(SdrsynthError):
    """The synthesis LMIs admit no solution."""


class NumericalFailure(SdrsynthError):
    """Solver failed, or a returned point did not survive re-substitution."""


class VertexCapExceeded(ConfigError):
    """Vertex enumeration would exceed the configured cap."""

    def __init__(self, count, cap):
        super().__init__(
            f"vertex enumeration needs {count} vertices, cap is {cap}; "
            "restructure the model/library or raise the cap"
        )
        self.count = count
        self.cap = cap


class DataError(SdrsynthError):
    """Experiment data violates an assumption (rank, noise bound, shapes)."""
