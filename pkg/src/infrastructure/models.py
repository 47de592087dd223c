# src/infrastructure/models.py
"""Pydantic models for the artifact, machine, performance-model, trace and
diagnostics file formats."""

from typing import Annotated, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, RootModel

from src.domain.value_objects import AccessMode, BaseType, Target


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# Kernel IR and main ops

class ConstModel(_Strict):
    op: Literal["const"] = "const"
    dst: str
    value: Union[int, float]
    ctype: BaseType


class MoveModel(_Strict):
    op: Literal["move"] = "move"
    dst: str
    src: str


class ConvertModel(_Strict):
    op: Literal["convert"] = "convert"
    dst: str
    src: str
    ctype: BaseType


class BinaryOpModel(_Strict):
    op: Literal["binary"] = "binary"
    dst: str
    operator: str
    lhs: str
    rhs: str
    ctype: BaseType


class CompareOpModel(_Strict):
    op: Literal["compare"] = "compare"
    dst: str
    operator: str
    lhs: str
    rhs: str


class UnaryOpModel(_Strict):
    op: Literal["unary"] = "unary"
    dst: str
    operator: str
    src: str
    ctype: BaseType


class LoadElemModel(_Strict):
    op: Literal["load"] = "load"
    dst: str
    buffer: str
    index: str
    ctype: BaseType


class StoreElemModel(_Strict):
    op: Literal["store"] = "store"
    buffer: str
    index: str
    src: str
    ctype: BaseType


class GlobalIdModel(_Strict):
    op: Literal["global_id"] = "global_id"
    dst: str
    dim: int = 0


class LoopModel(_Strict):
    op: Literal["loop"] = "loop"
    cond: List["OpModel"]
    test: str
    body: List["OpModel"]
    step: List["OpModel"] = Field(default_factory=list)


class BranchModel(_Strict):
    op: Literal["branch"] = "branch"
    test: str
    then: List["OpModel"]
    orelse: List["OpModel"] = Field(default_factory=list)


class ReturnOpModel(_Strict):
    op: Literal["return"] = "return"


class MallocModel(_Strict):
    op: Literal["malloc"] = "malloc"
    dst: str
    size: str


class FreeModel(_Strict):
    op: Literal["free"] = "free"
    src: str


class AllocOpModel(_Strict):
    op: Literal["alloc"] = "alloc"
    var: str
    shape: List[Annotated[int, Field(ge=1)]]
    elem_type: BaseType
    pinned: bool
    scoped: bool = False


class RegisterOpModel(_Strict):
    op: Literal["register"] = "register"
    var: str
    count: str
    elem_size: int = Field(..., ge=1)
    elem_type: BaseType
    site: str


class UnregisterOpModel(_Strict):
    op: Literal["unregister"] = "unregister"
    var: str
    site: str


class AcquireOpModel(_Strict):
    op: Literal["acquire"] = "acquire"
    var: str
    site: str


class WaitOpModel(_Strict):
    op: Literal["wait"] = "wait"
    site: str


class CallTaskOpModel(_Strict):
    op: Literal["call_task"] = "call_task"
    task: str
    args: List[str]
    site: str


class CleanupEntryModel(_Strict):
    var: str
    unregister: bool
    free: bool


class ScopeCleanupOpModel(_Strict):
    op: Literal["scope_end_cleanup"] = "scope_end_cleanup"
    entries: List[CleanupEntryModel]


class PlainStmtModel(_Strict):
    op: Literal["plain"] = "plain"
    ops: List["OpModel"]
    site: str = ""


OpModel = Annotated[
    Union[
        ConstModel, MoveModel, ConvertModel, BinaryOpModel, CompareOpModel, UnaryOpModel,
        LoadElemModel, StoreElemModel, GlobalIdModel, LoopModel, BranchModel,
        ReturnOpModel, MallocModel, FreeModel, AllocOpModel, RegisterOpModel,
        UnregisterOpModel, AcquireOpModel, WaitOpModel, CallTaskOpModel,
        ScopeCleanupOpModel, PlainStmtModel,
    ],
    Field(discriminator="op"),
]

for _model in (LoopModel, BranchModel, PlainStmtModel):
    _model.model_rebuild()


# Plans

class KernelParamModel(_Strict):
    name: str
    kind: Literal["scalar", "buffer"]
    ctype: BaseType


class KernelIRModel(_Strict):
    params: List[KernelParamModel]
    body: List[OpModel]
    device: bool = False


class BufferSlotModel(_Strict):
    param: str
    slot: int = Field(..., ge=0)
    elem_type: BaseType


class ScalarSlotModel(_Strict):
    param: str
    ctype: BaseType
    width: Literal[1, 2, 4, 8]


class WrapperPlanModel(_Strict):
    buffer_slots: List[BufferSlotModel]
    scalar_pack: List[ScalarSlotModel]


class EmbeddedKernelModel(_Strict):
    impl: str
    file: str
    kernel_name: str
    group_size: int = Field(..., ge=1)
    source_text: str
    kernel_ir: KernelIRModel


class ImplPlanModel(_Strict):
    function: str
    target: Target
    wrapper: WrapperPlanModel
    kernel_ir: Optional[KernelIRModel] = None
    embedded: Optional[EmbeddedKernelModel] = None


class ParamSpecModel(_Strict):
    name: str
    ctype: BaseType
    mode: AccessMode


class LookupStepModel(_Strict):
    param: str
    slot: int
    message: str


class SubmitArgModel(_Strict):
    kind: Literal["buffer", "scalar"]
    param: str


class TaskBodyPlanModel(_Strict):
    task: str
    lookups: List[LookupStepModel]
    codelet: str
    args: List[SubmitArgModel]
    failure_message: str


class CodeletPlanModel(_Strict):
    name: str
    params: List[ParamSpecModel]
    body_plan: TaskBodyPlanModel
    impls: List[ImplPlanModel] = Field(..., min_length=1)


class TargetConfigModel(_Strict):
    pointer_width_bits: Literal[32, 64] = 64
    long_width_bits: Literal[32, 64] = 64
    char_signed: bool = True


class ProgramMetadataModel(_Strict):
    source_file: str
    config: TargetConfigModel
    entry: str = "main"


class ArtifactModel(_Strict):
    """TaskProgram file."""
    format_version: int
    codelets: List[CodeletPlanModel]
    main_ops: List[OpModel]
    metadata: ProgramMetadataModel


# Machine and performance model

class WorkerModel(_Strict):
    id: int = Field(..., ge=0)
    arch: Target
    memory_node: int = Field(..., ge=0)
    speed_factor: float = Field(1.0, gt=0)


class MachineModel(_Strict):
    """Machine description; a null bandwidth means unlimited."""
    workers: List[WorkerModel] = Field(..., min_length=1)
    bandwidth: List[List[Optional[float]]]
    latency: List[List[float]]
    capacities: Optional[List[Optional[int]]] = None


class CostEntryModel(_Strict):
    base_seconds: float = Field(..., gt=0)
    seconds_per_byte: float = Field(0.0, ge=0)


class PerfModelFile(RootModel[Dict[str, CostEntryModel]]):
    """Cost entries keyed by "codelet/arch"."""


# Trace

class TaskEventModel(_Strict):
    kind: Literal["task"] = "task"
    task: int
    codelet: str
    worker: int
    start: float
    end: float


class TransferEventModel(_Strict):
    kind: Literal["transfer"] = "transfer"
    handle: int
    src: int
    dst: int
    nbytes: int
    start: float
    end: float


class MemoryEventModel(_Strict):
    kind: Literal["memory"] = "memory"
    action: Literal["alloc", "free", "register", "unregister"]
    var: str
    handle: Optional[int]
    address: int
    nbytes: int
    pinned: bool
    time: float


class ErrorEventModel(_Strict):
    kind: Literal["error"] = "error"
    message: str
    location: str
    time: float


TraceEventModel = Annotated[
    Union[TaskEventModel, TransferEventModel, MemoryEventModel, ErrorEventModel],
    Field(discriminator="kind"),
]


class TraceLine(RootModel[TraceEventModel]):
    """One line of a trace file."""


# Diagnostics

class DiagnosticModel(BaseModel):
    file: str
    line: int
    column: int
    severity: Literal["error", "warning"]
    code: str
    message: str


class DiagnosticList(RootModel[List[DiagnosticModel]]):
    """Machine-readable diagnostics output."""
