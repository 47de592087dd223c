# src/domain/exceptions.py
"""Exception hierarchy for compilation and simulation failures."""

from typing import FrozenSet, Optional

from .value_objects import SourceLocation


class TaskCError(ValueError):
    """Base class for TaskC failures, optionally tied to a source location."""

    def __init__(self, message: str, location: Optional[SourceLocation] = None):
        super().__init__(message)
        self.message = message
        self.location = location

    def __str__(self) -> str:
        if self.location is None:
            return self.message
        return f"{self.location}: {self.message}"


class LexError(TaskCError):
    """Illegal character or unterminated literal."""


class ParseError(TaskCError):
    """Token sequence outside the TaskC grammar."""

    def __init__(
        self,
        message: str,
        location: Optional[SourceLocation] = None,
        expected: FrozenSet[str] = frozenset(),
    ):
        super().__init__(message, location)
        self.expected = expected


class LoweringError(TaskCError):
    """Construct that cannot be lowered to kernel IR or main ops."""


class CompileError(TaskCError):
    """Failure while embedding device kernels."""


class ConfigError(TaskCError):
    """Undecodable input file, invalid machine or performance model, or bad options."""


class ArtifactError(TaskCError):
    """Unreadable or malformed TaskProgram artifact."""


class TraceValidationError(TaskCError):
    """Trace file that is malformed or violates trace invariants."""


class OverlapError(TaskCError):
    """Registration overlapping a live data handle."""


class SubmitError(TaskCError):
    """Task submission referencing a handle that is no longer live."""


class UseAfterUnregisterError(TaskCError):
    """Operation on a data handle after it was unregistered."""


class KernelFault(TaskCError):
    """Fault raised while evaluating kernel IR."""


class InvariantViolation(TaskCError):
    """Internal consistency check failed (coherence, cleanup bookkeeping)."""


class RuntimeFailure(TaskCError):
    """Fatal runtime event; already recorded in the trace when raised."""

    def __init__(self, message: str, site: str):
        super().__init__(message)
        self.site = site

    def __str__(self) -> str:
        return f"{self.site}: error: {self.message}"
