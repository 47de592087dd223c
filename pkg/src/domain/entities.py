# src/domain/entities.py
"""Domain entities: the semantic program model and the runtime data model."""

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Dict, List, Optional, Set

if TYPE_CHECKING:
    from typing import Self

import numpy as np

from .ast import Block, Expr, FunctionDecl, VarDecl
from .exceptions import InvariantViolation, UseAfterUnregisterError
from .value_objects import (
    AccessMode,
    BaseType,
    CoherenceState,
    SourceLocation,
    Target,
    TargetConfig,
    TypeExpr,
)


# Program model

@dataclass(frozen=True)
class TaskParam:
    """Task parameter with its derived access mode."""
    name: str
    type: TypeExpr
    mode: AccessMode
    location: SourceLocation

    def __post_init__(self) -> None:
        if self.type.is_buffer and self.mode is AccessMode.SCALAR:
            raise ValueError(f"Buffer parameter '{self.name}' needs a buffer access mode")
        if not self.type.is_buffer and self.mode is not AccessMode.SCALAR:
            raise ValueError(f"Scalar parameter '{self.name}' must be passed by value")

    @property
    def is_buffer(self) -> bool:
        return self.type.is_buffer


@dataclass
class TaskDecl:
    """A function declared with the `task` attribute."""
    name: str
    params: List[TaskParam]
    location: SourceLocation
    implicit_cpu_body: Optional[Block] = None

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("Task name is required")

    @property
    def buffer_params(self) -> List[TaskParam]:
        return [p for p in self.params if p.is_buffer]

    @property
    def scalar_params(self) -> List[TaskParam]:
        return [p for p in self.params if not p.is_buffer]

    @property
    def nbuffers(self) -> int:
        return len(self.buffer_params)

    def take_body(self) -> Block:
        """Detach the implicit CPU body; the declaration becomes bodiless."""
        if self.implicit_cpu_body is None:
            raise ValueError(f"Task '{self.name}' has no body")
        body, self.implicit_cpu_body = self.implicit_cpu_body, None
        return body


@dataclass(frozen=True)
class KernelBinding:
    """Kernel source named by an opencl pragma."""
    file: str
    kernel: str
    group_size: int
    location: SourceLocation

    def __post_init__(self) -> None:
        if self.group_size < 1:
            raise ValueError("Group size must be at least 1")


@dataclass
class TaskImpl:
    """One implementation of a task for a target."""
    task: str
    target: Target
    function: FunctionDecl
    defined: bool
    kernel_binding: Optional[KernelBinding] = None
    implicit: bool = False

    @property
    def name(self) -> str:
        return self.function.name

    @property
    def is_available(self) -> bool:
        """Defined in this unit (cpu) or bound to a kernel (devices)."""
        if self.target.is_device:
            return self.kernel_binding is not None
        return self.defined

    def bind_kernel(self, binding: KernelBinding) -> None:
        if not self.target.is_device:
            raise ValueError(f"Implementation '{self.name}' does not target a device")
        if self.kernel_binding is not None:
            raise ValueError(f"Implementation '{self.name}' is already bound to a kernel")
        self.kernel_binding = binding


@dataclass
class CodeletDescriptor:
    """Codelet of a task: name, buffer modes and implementations."""
    name: str
    nbuffers: int
    modes: List[AccessMode]
    impls: Dict[Target, TaskImpl] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.modes) != self.nbuffers:
            raise ValueError("Codelet needs one access mode per buffer")

    @classmethod
    def for_task(cls, task: TaskDecl, impls: List[TaskImpl]) -> "Self":
        return cls(
            name=task.name,
            nbuffers=task.nbuffers,
            modes=[p.mode for p in task.buffer_params],
            impls={impl.target: impl for impl in impls},
        )

    @property
    def targets(self) -> List[Target]:
        return [t for t in Target if t in self.impls]


@dataclass(frozen=True)
class RegistrationSite:
    """A register pragma resolved against its variable."""
    variable: str
    function: str
    location: SourceLocation
    count: Optional[Expr]
    static_count: Optional[int]
    elem_type: BaseType
    elem_size: int
    automatic: bool


@dataclass(frozen=True)
class ScopedVarSite:
    """Block-scope variable with `registered` and/or `heap_allocated`."""
    variable: str
    function: str
    location: SourceLocation
    type: TypeExpr
    registered: bool
    heap_allocated: bool


@dataclass
class ProgramModel:
    """Semantic view of a translation unit."""
    file: str
    config: TargetConfig
    tasks: Dict[str, TaskDecl] = field(default_factory=dict)
    impls: List[TaskImpl] = field(default_factory=list)
    codelets: Dict[str, CodeletDescriptor] = field(default_factory=dict)
    registrations: List[RegistrationSite] = field(default_factory=list)
    scoped_vars: List[ScopedVarSite] = field(default_factory=list)
    functions: Dict[str, FunctionDecl] = field(default_factory=dict)
    globals: List[VarDecl] = field(default_factory=list)
    entry: Optional[FunctionDecl] = None

    def impls_of(self, task: str) -> List[TaskImpl]:
        return [i for i in self.impls if i.task == task]

    def impl_named(self, name: str) -> Optional[TaskImpl]:
        for impl in self.impls:
            if impl.name == name:
                return impl
        return None

    @property
    def main_statements(self) -> Optional[Block]:
        return None if self.entry is None else self.entry.body


# Runtime data model

class TaskState(Enum):
    """Task instance lifecycle."""
    BLOCKED = "blocked"
    READY = "ready"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


@dataclass
class Allocation:
    """Block of simulated host memory."""
    base: int
    nbytes: int
    pinned: bool
    var: str
    data: np.ndarray
    freed: bool = False

    def __post_init__(self) -> None:
        if self.nbytes < 1:
            raise ValueError("Allocation size must be positive")

    def contains(self, address: int, nbytes: int = 1) -> bool:
        return self.base <= address and address + nbytes <= self.base + self.nbytes

    def view(self, address: int, nbytes: int) -> np.ndarray:
        """Byte view of part of the allocation (writes go to the heap)."""
        offset = address - self.base
        return self.data[offset:offset + nbytes]

    def free(self) -> None:
        if self.freed:
            raise ValueError(f"Allocation of '{self.var}' freed twice")
        self.freed = True


@dataclass(frozen=True)
class HandleArg:
    """Handle passed to a task together with its access mode."""
    handle: int
    mode: AccessMode


@dataclass
class DataHandle:
    """Registered buffer tracked across memory nodes (MSI-style)."""
    id: int
    base: int
    elem_size: int
    nx: int
    elem_type: BaseType
    var: str
    pinned: bool
    host_copy: np.ndarray
    states: Dict[int, CoherenceState] = field(default_factory=dict)
    copies: Dict[int, np.ndarray] = field(default_factory=dict)
    live: bool = True

    def __post_init__(self) -> None:
        if self.nx < 1:
            raise ValueError("Handle must cover at least one element")
        if self.elem_size < 1:
            raise ValueError("Element size must be positive")
        if not self.states:
            self.states = {0: CoherenceState.OWNER}
            self.copies = {0: self.host_copy}

    @property
    def nbytes(self) -> int:
        return self.nx * self.elem_size

    @property
    def end(self) -> int:
        return self.base + self.nbytes

    def overlaps(self, base: int, nbytes: int) -> bool:
        return base < self.end and self.base < base + nbytes

    def state_on(self, node: int) -> CoherenceState:
        return self.states.get(node, CoherenceState.INVALID)

    def is_valid_on(self, node: int) -> bool:
        return self.state_on(node) is not CoherenceState.INVALID

    def valid_nodes(self) -> List[int]:
        return sorted(n for n, s in self.states.items() if s is not CoherenceState.INVALID)

    def source_for(self, node: int) -> Optional[int]:
        """Node to copy from so that `node` becomes valid, None if already valid."""
        if self.is_valid_on(node):
            return None
        valid = self.valid_nodes()
        return 0 if 0 in valid else valid[0]

    def fetch(self, node: int) -> Optional[int]:
        """Make `node` hold a valid copy for reading; returns the source node used."""
        self._require_live()
        source = self.source_for(node)
        if source is None:
            return None
        self._copy_on(node)[:] = self.copies[source]
        if self.states[source] is CoherenceState.OWNER:
            self.states[source] = CoherenceState.SHARED
        self.states[node] = CoherenceState.SHARED
        return source

    def write(self, node: int) -> None:
        """Record a write on `node`: it becomes Owner, every other copy Invalid."""
        self._require_live()
        self._copy_on(node)
        for other in list(self.states):
            self.states[other] = CoherenceState.INVALID
        self.states[node] = CoherenceState.OWNER

    def view_on(self, node: int) -> np.ndarray:
        """Byte copy on `node` (allocated if missing)."""
        return self._copy_on(node)

    def drop_device_copies(self) -> None:
        for node in [n for n in self.copies if n != 0]:
            del self.copies[node]
            del self.states[node]

    def unregister(self) -> None:
        self._require_live()
        if not self.is_valid_on(0):
            raise InvariantViolation(f"Handle {self.id} unregistered without host copy")
        self.drop_device_copies()
        self.live = False

    def check_coherence(self) -> None:
        """Exactly one Owner and no Shared, or Shared copies with identical bytes."""
        owners = [n for n, s in self.states.items() if s is CoherenceState.OWNER]
        shared = [n for n, s in self.states.items() if s is CoherenceState.SHARED]
        if len(owners) == 1 and not shared:
            return
        if not owners and shared:
            reference = self.copies[shared[0]]
            for node in shared[1:]:
                if not np.array_equal(reference, self.copies[node]):
                    raise InvariantViolation(
                        f"Handle {self.id}: shared copies on nodes {shared[0]} and {node} differ"
                    )
            return
        raise InvariantViolation(
            f"Handle {self.id}: {len(owners)} owners and {len(shared)} shared copies"
        )

    def _copy_on(self, node: int) -> np.ndarray:
        if node not in self.copies:
            self.copies[node] = np.zeros(self.nbytes, dtype=np.uint8)
            self.states.setdefault(node, CoherenceState.INVALID)
        return self.copies[node]

    def _require_live(self) -> None:
        if not self.live:
            raise UseAfterUnregisterError(f"Handle {self.id} ('{self.var}') was unregistered")


@dataclass
class TaskInstance:
    """A submitted task with its inferred dependencies."""
    id: int
    codelet: str
    scalar_pack: bytes
    args: List[HandleArg]
    site: str
    deps: Set[int] = field(default_factory=set)
    state: TaskState = TaskState.BLOCKED
    worker: Optional[int] = None
    error: Optional[str] = None

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError("Task id cannot be negative")
        if any(dep >= self.id for dep in self.deps):
            raise ValueError("Tasks may only depend on earlier submissions")

    @property
    def is_finished(self) -> bool:
        return self.state in (TaskState.DONE, TaskState.FAILED)

    def mark_ready(self) -> None:
        if self.state is not TaskState.BLOCKED:
            raise ValueError(f"Task {self.id} cannot become ready from {self.state.value}")
        self.state = TaskState.READY

    def start(self, worker: int) -> None:
        if self.state is not TaskState.READY:
            raise ValueError(f"Task {self.id} cannot start from {self.state.value}")
        self.state = TaskState.RUNNING
        self.worker = worker

    def complete(self) -> None:
        if self.state is not TaskState.RUNNING:
            raise ValueError(f"Task {self.id} cannot complete from {self.state.value}")
        self.state = TaskState.DONE

    def fail(self, error: str) -> None:
        if self.is_finished:
            raise ValueError(f"Task {self.id} already finished")
        self.state = TaskState.FAILED
        self.error = error


@dataclass(frozen=True)
class HandleSnapshot:
    """Host bytes of a handle when it was unregistered or the run ended."""
    handle: int
    var: str
    elem_type: BaseType
    data: bytes

    def values(self, config: TargetConfig) -> np.ndarray:
        return np.frombuffer(self.data, dtype=self.elem_type.dtype(config))
