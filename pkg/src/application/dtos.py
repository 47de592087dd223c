# src/application/dtos.py
"""Data Transfer Objects for the application layer."""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from src.domain.entities import ProgramModel
from src.domain.program import TaskProgram
from src.domain.value_objects import Diagnostic, TargetConfig


@dataclass
class CompileRequestDTO:
    """DTO for checking or building a TaskC file."""
    file: str
    config: TargetConfig = field(default_factory=TargetConfig)
    entry: str = "main"
    registration_check: bool = True
    werror: bool = False


@dataclass
class CheckResultDTO:
    """DTO for the outcome of semantic checking."""
    diagnostics: List[Diagnostic]
    model: Optional[ProgramModel] = None
    werror: bool = False

    @property
    def has_errors(self) -> bool:
        return any(d.is_error for d in self.diagnostics)

    @property
    def failed(self) -> bool:
        """Errors, or warnings promoted by --werror."""
        return self.has_errors or (self.werror and bool(self.diagnostics))


@dataclass
class BuildRequestDTO:
    """DTO for building an artifact."""
    compile: CompileRequestDTO
    output: str


@dataclass
class BuildResultDTO:
    """DTO for the outcome of a build."""
    check: CheckResultDTO
    program: Optional[TaskProgram] = None
    written: Optional[str] = None


@dataclass
class RunRequestDTO:
    """DTO for simulating an artifact."""
    artifact: str
    machine: Optional[str] = None
    perf: Optional[str] = None
    sched: str = "eager"
    trace: Optional[str] = None
    check_invariants: bool = True
    max_steps: Optional[int] = None


@dataclass
class TraceSummaryDTO:
    """DTO for trace statistics."""
    busy_by_worker: Dict[int, float]
    bytes_by_link: Dict[Tuple[int, int], int]
    makespan: float
    task_count: int
    transfer_count: int = 0
    error_count: int = 0
