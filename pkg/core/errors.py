"""
rmtlab - Exception hierarchy
============================
Every failure raised by the numerical core derives from RmtLabError so the
CLI can map it onto an exit code.
"""
from typing import Any, Dict, Optional, Sequence


class RmtLabError(Exception):
    """Base class for all rmtlab errors"""


class DomainError(RmtLabError, ValueError):
    """A precondition on the inputs of an operation is violated"""


class SolverFailure(RmtLabError):
    """The self-consistent cubic has no admissible root (treated as a bug signal)"""


class DenseCapExceeded(RmtLabError):
    """A dense path was requested above the configured dimension cap"""

    def __init__(self, dimension: int, cap: int, hint: str = ""):
        self.dimension = dimension
        self.cap = cap
        message = f"dense dimension {dimension} exceeds cap {cap}"
        if hint:
            message += f" - {hint}"
        super().__init__(message)


class ConvergenceError(RmtLabError):
    """
    An iterative eigensolver did not converge.

    The partial state (partial Schur form, last Ritz values, ...) is kept on
    the exception so callers can inspect how far the iteration got.
    """

    def __init__(self, message: str, partial_state: Optional[Dict[str, Any]] = None):
        self.partial_state = partial_state or {}
        super().__init__(message)


class QuadratureError(RmtLabError):
    """2-D quadrature refinement did not settle"""

    def __init__(self, message: str, last_values: Sequence[complex] = ()):
        self.last_values = tuple(last_values)
        super().__init__(f"{message} (last refinements: {self.last_values})")


class ConfigError(RmtLabError, ValueError):
    """Invalid experiment configuration"""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__(
            "Experiment configuration invalid:\n" +
            "\n".join(f"  - {err}" for err in self.errors)
        )


NUMERICAL_ERRORS = (ConvergenceError, SolverFailure, DenseCapExceeded, QuadratureError)
