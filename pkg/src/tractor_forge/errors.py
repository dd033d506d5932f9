"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class TractorForgeError(Exception):
    """Base class for every error raised by this package."""


class ExprSyntaxError(TractorForgeError, ValueError):
    """Raised by the parser; ``offset`` is a UTF-8 byte offset into the source."""

    def __init__(self, message: str, offset: int, text: str = ""):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset
        self.text = text


class DomainError(TractorForgeError, ArithmeticError):
    """An expression was evaluated outside the domain of one of its nodes."""

    def __init__(self, message: str, node=None, point=None):
        where = f" in '{node}'" if node is not None else ""
        at = f" at {dict(point)}" if point is not None else ""
        super().__init__(f"{message}{where}{at}")
        self.node = node
        self.point = point


class SingularMetric(TractorForgeError):
    pass


class SchoutenUndefined(TractorForgeError):
    """The Schouten tensor was requested in dimension 2."""


class BoundaryTooClose(TractorForgeError):
    pass


class OutOfDomain(TractorForgeError):
    pass


class RequiresRZero(TractorForgeError):
    pass


class SingularGram(TractorForgeError):
    pass


class RequiresNormalizedFamily(TractorForgeError):
    pass


class StepSizeUnderflow(TractorForgeError):
    pass


class NotEinstein(TractorForgeError):
    def __init__(self, residual: float, tol: float):
        super().__init__(f"metric is not Einstein: residual {residual:.3e} > {tol:.1e}")
        self.residual = residual
        self.tol = tol


class ConfigError(TractorForgeError):
    pass
