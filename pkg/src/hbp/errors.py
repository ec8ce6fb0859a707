"""Exception hierarchy shared by every stage of the planner."""

from __future__ import annotations


class HBPError(Exception):
    """Base class for planner errors."""


class ValidationError(HBPError, ValueError):
    """Input violates a documented precondition."""


class ParseError(ValidationError):
    """A corpus or manifest record could not be parsed."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InfeasibleError(HBPError):
    """No runtime configuration satisfies the memory or profiling constraints."""


class OutOfMemoryError(InfeasibleError):
    """A configuration needs more device memory than is available."""

    def __init__(self, required: float, available: float, what: str = "") -> None:
        self.required = required
        self.available = available
        prefix = f"{what}: " if what else ""
        super().__init__(
            f"{prefix}out of memory, requires {required:.4g} bytes, "
            f"{available:.4g} available"
        )
