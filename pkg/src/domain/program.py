# src/domain/program.py
"""Lowered program: kernel IR, marshalling plans, main-procedure ops."""

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, ClassVar, Dict, Optional, Tuple, Union

if TYPE_CHECKING:
    from typing import Self

from .value_objects import AccessMode, BaseType, Target, TargetConfig

FORMAT_VERSION = 1


# Kernel IR: a register machine with structured control flow.

@dataclass(frozen=True)
class Const:
    OP: ClassVar[str] = "const"
    dst: str
    value: Union[int, float]
    ctype: BaseType


@dataclass(frozen=True)
class Move:
    OP: ClassVar[str] = "move"
    dst: str
    src: str


@dataclass(frozen=True)
class Convert:
    OP: ClassVar[str] = "convert"
    dst: str
    src: str
    ctype: BaseType


@dataclass(frozen=True)
class BinaryOp:
    OP: ClassVar[str] = "binary"
    dst: str
    op: str
    lhs: str
    rhs: str
    ctype: BaseType


@dataclass(frozen=True)
class CompareOp:
    OP: ClassVar[str] = "compare"
    dst: str
    op: str
    lhs: str
    rhs: str


@dataclass(frozen=True)
class UnaryOp:
    OP: ClassVar[str] = "unary"
    dst: str
    op: str
    src: str
    ctype: BaseType


@dataclass(frozen=True)
class LoadElem:
    OP: ClassVar[str] = "load"
    dst: str
    buffer: str
    index: str
    ctype: BaseType


@dataclass(frozen=True)
class StoreElem:
    OP: ClassVar[str] = "store"
    buffer: str
    index: str
    src: str
    ctype: BaseType


@dataclass(frozen=True)
class GlobalId:
    OP: ClassVar[str] = "global_id"
    dst: str
    dim: int = 0


@dataclass(frozen=True)
class Loop:
    """`cond` is re-evaluated before every iteration; the loop runs while `test` != 0."""
    OP: ClassVar[str] = "loop"
    cond: Tuple["Op", ...]
    test: str
    body: Tuple["Op", ...]
    step: Tuple["Op", ...] = ()


@dataclass(frozen=True)
class Branch:
    OP: ClassVar[str] = "branch"
    test: str
    then: Tuple["Op", ...]
    orelse: Tuple["Op", ...] = ()


@dataclass(frozen=True)
class ReturnOp:
    OP: ClassVar[str] = "return"


@dataclass(frozen=True)
class Malloc:
    OP: ClassVar[str] = "malloc"
    dst: str
    size: str


@dataclass(frozen=True)
class Free:
    OP: ClassVar[str] = "free"
    src: str


# Main-procedure ops

@dataclass(frozen=True)
class AllocOp:
    OP: ClassVar[str] = "alloc"
    var: str
    shape: Tuple[int, ...]
    elem_type: BaseType
    pinned: bool
    scoped: bool = False

    def __post_init__(self) -> None:
        if not self.shape or any(dim < 1 for dim in self.shape):
            raise ValueError("Allocation shape dims must be at least 1")

    @property
    def count(self) -> int:
        count = 1
        for dim in self.shape:
            count *= dim
        return count


@dataclass(frozen=True)
class RegisterOp:
    OP: ClassVar[str] = "register"
    var: str
    count: str
    elem_size: int
    elem_type: BaseType
    site: str


@dataclass(frozen=True)
class UnregisterOp:
    OP: ClassVar[str] = "unregister"
    var: str
    site: str


@dataclass(frozen=True)
class AcquireOp:
    OP: ClassVar[str] = "acquire"
    var: str
    site: str


@dataclass(frozen=True)
class WaitOp:
    OP: ClassVar[str] = "wait"
    site: str


@dataclass(frozen=True)
class CallTaskOp:
    OP: ClassVar[str] = "call_task"
    task: str
    args: Tuple[str, ...]
    site: str


@dataclass(frozen=True)
class CleanupEntry:
    var: str
    unregister: bool
    free: bool


@dataclass(frozen=True)
class ScopeCleanupOp:
    """Leaves a scope: entries are already in reverse definition order."""
    OP: ClassVar[str] = "scope_end_cleanup"
    entries: Tuple[CleanupEntry, ...]


@dataclass(frozen=True)
class PlainStmt:
    """Straight-line kernel IR executed by the submitter."""
    OP: ClassVar[str] = "plain"
    ops: Tuple["Op", ...]
    site: str = ""


IR_OPS = (
    Const, Move, Convert, BinaryOp, CompareOp, UnaryOp, LoadElem, StoreElem,
    GlobalId, Loop, Branch, ReturnOp, Malloc, Free,
)
MAIN_OPS = (
    AllocOp, RegisterOp, UnregisterOp, AcquireOp, WaitOp, CallTaskOp,
    ScopeCleanupOp, PlainStmt,
)
OP_TYPES: Dict[str, type] = {cls.OP: cls for cls in IR_OPS + MAIN_OPS}

Op = Union[
    Const, Move, Convert, BinaryOp, CompareOp, UnaryOp, LoadElem, StoreElem,
    GlobalId, Loop, Branch, ReturnOp, Malloc, Free,
    AllocOp, RegisterOp, UnregisterOp, AcquireOp, WaitOp, CallTaskOp,
    ScopeCleanupOp, PlainStmt,
]


def iter_ops(ops: Tuple[Op, ...]):
    """Pre-order walk through nested op lists."""
    for op in ops:
        yield op
        if isinstance(op, Loop):
            yield from iter_ops(op.cond)
            yield from iter_ops(op.body)
            yield from iter_ops(op.step)
        elif isinstance(op, Branch):
            yield from iter_ops(op.then)
            yield from iter_ops(op.orelse)
        elif isinstance(op, PlainStmt):
            yield from iter_ops(op.ops)


# Plans

@dataclass(frozen=True)
class KernelParam:
    name: str
    kind: str
    ctype: BaseType

    def __post_init__(self) -> None:
        if self.kind not in ("scalar", "buffer"):
            raise ValueError(f"Unknown kernel parameter kind '{self.kind}'")


@dataclass(frozen=True)
class KernelIR:
    """Body of an implementation lowered to IR."""
    params: Tuple[KernelParam, ...]
    body: Tuple[Op, ...]
    device: bool = False

    @property
    def buffer_params(self) -> Tuple[KernelParam, ...]:
        return tuple(p for p in self.params if p.kind == "buffer")


@dataclass(frozen=True)
class BufferSlot:
    param: str
    slot: int
    elem_type: BaseType


@dataclass(frozen=True)
class ScalarSlot:
    param: str
    ctype: BaseType
    width: int

    def __post_init__(self) -> None:
        if self.width not in (1, 2, 4, 8):
            raise ValueError(f"Unsupported scalar width {self.width}")


@dataclass(frozen=True)
class WrapperPlan:
    """How an implementation receives its arguments."""
    buffer_slots: Tuple[BufferSlot, ...]
    scalar_pack: Tuple[ScalarSlot, ...]

    def __post_init__(self) -> None:
        if [s.slot for s in self.buffer_slots] != list(range(len(self.buffer_slots))):
            raise ValueError("Buffer slots must be numbered 0..nbuffers-1 in order")

    @property
    def pack_size(self) -> int:
        return sum(s.width for s in self.scalar_pack)


@dataclass(frozen=True)
class LookupStep:
    param: str
    slot: int
    message: str = "attempt to use unregistered pointer"


@dataclass(frozen=True)
class SubmitArg:
    kind: str
    param: str


@dataclass(frozen=True)
class TaskBodyPlan:
    """Generated body of a task: handle lookups followed by one submission."""
    task: str
    lookups: Tuple[LookupStep, ...]
    codelet: str
    args: Tuple[SubmitArg, ...]
    failure_message: str

    def __post_init__(self) -> None:
        buffers = [a.param for a in self.args if a.kind == "buffer"]
        if buffers != [step.param for step in self.lookups]:
            raise ValueError("Every buffer argument needs exactly one lookup, in order")


@dataclass(frozen=True)
class EmbeddedKernel:
    """Device kernel source captured at compile time."""
    impl: str
    file: str
    kernel_name: str
    group_size: int
    source_text: str
    kernel_ir: KernelIR

    def __post_init__(self) -> None:
        if self.group_size < 1:
            raise ValueError("Group size must be at least 1")


@dataclass(frozen=True)
class ImplPlan:
    function: str
    target: Target
    wrapper: WrapperPlan
    kernel_ir: Optional[KernelIR] = None
    embedded: Optional[EmbeddedKernel] = None

    def __post_init__(self) -> None:
        if (self.kernel_ir is None) == (self.embedded is None):
            raise ValueError("An implementation has either kernel IR or an embedded kernel")

    @property
    def ir(self) -> KernelIR:
        return self.kernel_ir if self.embedded is None else self.embedded.kernel_ir


@dataclass(frozen=True)
class ParamSpec:
    name: str
    ctype: BaseType
    mode: AccessMode

    @property
    def is_buffer(self) -> bool:
        return self.mode is not AccessMode.SCALAR


@dataclass(frozen=True)
class CodeletPlan:
    name: str
    params: Tuple[ParamSpec, ...]
    body_plan: TaskBodyPlan
    impls: Tuple[ImplPlan, ...]

    @property
    def nbuffers(self) -> int:
        return sum(1 for p in self.params if p.is_buffer)

    @property
    def modes(self) -> Tuple[AccessMode, ...]:
        return tuple(p.mode for p in self.params if p.is_buffer)

    def impl_for(self, target: Target) -> Optional[ImplPlan]:
        for impl in self.impls:
            if impl.target is target:
                return impl
        return None


@dataclass(frozen=True)
class ProgramMetadata:
    source_file: str
    config: TargetConfig
    entry: str = "main"
    format_version: int = FORMAT_VERSION


@dataclass(frozen=True)
class TaskProgram:
    """Self-contained lowered program."""
    codelets: Tuple[CodeletPlan, ...]
    main_ops: Tuple[Op, ...]
    metadata: ProgramMetadata
    _index: Dict[str, CodeletPlan] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self) -> None:
        self._index.update({c.name: c for c in self.codelets})
        for op in iter_ops(self.main_ops):
            if isinstance(op, CallTaskOp) and op.task not in self._index:
                raise ValueError(f"Call to unknown codelet '{op.task}'")

    def codelet(self, name: str) -> CodeletPlan:
        return self._index[name]

    @classmethod
    def empty(cls, source_file: str, config: TargetConfig) -> "Self":
        return cls((), (), ProgramMetadata(source_file, config))
