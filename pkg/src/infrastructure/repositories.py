# src/infrastructure/repositories.py
"""File-backed repository implementations with pydantic validation."""

import logging
import math
from dataclasses import asdict, fields, is_dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel, ValidationError

from src.application.repositories import (
    ArtifactRepository,
    KernelSourceRepository,
    MachineRepository,
    PerfModelRepository,
    SourceRepository,
    TraceRepository,
)
from src.domain.exceptions import ArtifactError, ConfigError, TraceValidationError
from src.domain.machine import (
    CostEntry,
    ErrorEvent,
    MachineDescription,
    MemoryEvent,
    PerfModel,
    TaskEvent,
    Trace,
    TraceEvent,
    TransferEvent,
    Worker,
)
from src.domain.program import (
    FORMAT_VERSION,
    OP_TYPES,
    BufferSlot,
    CleanupEntry,
    CodeletPlan,
    EmbeddedKernel,
    ImplPlan,
    KernelIR,
    KernelParam,
    LookupStep,
    Op,
    ParamSpec,
    ProgramMetadata,
    ScalarSlot,
    SubmitArg,
    TaskBodyPlan,
    TaskProgram,
    WrapperPlan,
)
from src.domain.value_objects import Diagnostic, Target, TargetConfig
from src.infrastructure.models import (
    ArtifactModel,
    CleanupEntryModel,
    CodeletPlanModel,
    DiagnosticList,
    KernelIRModel,
    MachineModel,
    PerfModelFile,
    TraceLine,
)

logger = logging.getLogger(__name__)

_EVENT_TYPES = {cls.KIND: cls for cls in (TaskEvent, TransferEvent, MemoryEvent, ErrorEvent)}


def _validation_summary(error: ValidationError) -> str:
    first = error.errors()[0]
    where = ".".join(str(part) for part in first["loc"])
    return f"{where}: {first['msg']}" if where else first["msg"]


# Artifact mappers

def _plain(value):
    """Domain value as JSON-ready data; ops carry their `op` tag."""
    if isinstance(value, tuple | list):
        return [_plain(v) for v in value]
    if isinstance(value, Enum):
        return value.value
    if is_dataclass(value):
        data = {}
        if hasattr(type(value), "OP"):
            data["op"] = value.OP
        for f in fields(value):
            if f.name.startswith("_"):
                continue
            # The operator symbol of binary/compare/unary ops clashes with the tag.
            key = "operator" if f.name == "op" else f.name
            data[key] = _plain(getattr(value, f.name))
        return data
    return value


def program_to_dict(program: TaskProgram) -> dict:
    metadata = program.metadata
    return {
        "format_version": metadata.format_version,
        "codelets": _plain(program.codelets),
        "main_ops": _plain(program.main_ops),
        "metadata": {
            "source_file": metadata.source_file,
            "config": _plain(metadata.config),
            "entry": metadata.entry,
        },
    }


def model_to_op(model: BaseModel) -> Op:
    cls = OP_TYPES[model.op]
    kwargs = {}
    for f in fields(cls):
        kwargs[f.name] = _domain(getattr(model, "operator" if f.name == "op" else f.name))
    return cls(**kwargs)


def _domain(value):
    if isinstance(value, list):
        return tuple(_domain(v) for v in value)
    if isinstance(value, CleanupEntryModel):
        return CleanupEntry(value.var, value.unregister, value.free)
    if isinstance(value, BaseModel):
        return model_to_op(value)
    return value


def _kernel_ir_from_model(model: KernelIRModel) -> KernelIR:
    return KernelIR(
        params=tuple(KernelParam(p.name, p.kind, p.ctype) for p in model.params),
        body=tuple(model_to_op(op) for op in model.body),
        device=model.device,
    )


def _codelet_from_model(model: CodeletPlanModel) -> CodeletPlan:
    plan = model.body_plan
    body_plan = TaskBodyPlan(
        task=plan.task,
        lookups=tuple(LookupStep(s.param, s.slot, s.message) for s in plan.lookups),
        codelet=plan.codelet,
        args=tuple(SubmitArg(a.kind, a.param) for a in plan.args),
        failure_message=plan.failure_message,
    )
    impls = []
    for impl in model.impls:
        wrapper = WrapperPlan(
            buffer_slots=tuple(
                BufferSlot(s.param, s.slot, s.elem_type) for s in impl.wrapper.buffer_slots
            ),
            scalar_pack=tuple(
                ScalarSlot(s.param, s.ctype, s.width) for s in impl.wrapper.scalar_pack
            ),
        )
        embedded = None
        if impl.embedded is not None:
            e = impl.embedded
            embedded = EmbeddedKernel(
                e.impl, e.file, e.kernel_name, e.group_size, e.source_text,
                _kernel_ir_from_model(e.kernel_ir),
            )
        kernel_ir = None if impl.kernel_ir is None else _kernel_ir_from_model(impl.kernel_ir)
        impls.append(ImplPlan(impl.function, impl.target, wrapper, kernel_ir, embedded))
    return CodeletPlan(
        name=model.name,
        params=tuple(ParamSpec(p.name, p.ctype, p.mode) for p in model.params),
        body_plan=body_plan,
        impls=tuple(impls),
    )


def program_from_model(model: ArtifactModel) -> TaskProgram:
    config = model.metadata.config
    return TaskProgram(
        codelets=tuple(_codelet_from_model(c) for c in model.codelets),
        main_ops=tuple(model_to_op(op) for op in model.main_ops),
        metadata=ProgramMetadata(
            source_file=model.metadata.source_file,
            config=TargetConfig(
                config.pointer_width_bits, config.long_width_bits, config.char_signed
            ),
            entry=model.metadata.entry,
            format_version=model.format_version,
        ),
    )


# Repositories

def read_text(path: Path, error: type = ConfigError) -> str:
    """UTF-8 file contents; undecodable bytes raise `error`."""
    try:
        return path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise error(f"{path}: not valid UTF-8 text (byte {e.start})") from e


class FileSourceRepository(SourceRepository):
    """Reads TaskC sources from the file system."""

    def read(self, path: str) -> str:
        return read_text(Path(path))


class FileKernelSourceRepository(KernelSourceRepository):
    """Reads kernel files next to the source that names them."""

    def find(self, file: str, relative_to: str) -> Optional[str]:
        path = Path(file)
        if not path.is_absolute():
            path = Path(relative_to).parent / path
        if not path.is_file():
            logger.debug(f"Kernel file {path} not found")
            return None
        return read_text(path)


class JsonArtifactRepository(ArtifactRepository):
    """TaskProgram artifacts as JSON documents."""

    def save(self, program: TaskProgram, path: str) -> None:
        model = ArtifactModel.model_validate(program_to_dict(program))
        Path(path).write_text(model.model_dump_json(indent=1) + "\n", encoding="utf-8")

    def load(self, path: str) -> TaskProgram:
        text = read_text(Path(path), ArtifactError)
        try:
            model = ArtifactModel.model_validate_json(text)
        except ValidationError as e:
            raise ArtifactError(f"{path}: malformed artifact: {_validation_summary(e)}") from e
        if model.format_version != FORMAT_VERSION:
            raise ArtifactError(
                f"{path}: format version {model.format_version} is not supported "
                f"(expected {FORMAT_VERSION})"
            )
        try:
            return program_from_model(model)
        except ValueError as e:
            raise ArtifactError(f"{path}: inconsistent artifact: {e}") from e


class JsonMachineRepository(MachineRepository):
    """Machine descriptions as JSON documents."""

    def load(self, path: str) -> MachineDescription:
        try:
            model = MachineModel.model_validate_json(read_text(Path(path)))
        except ValidationError as e:
            raise ConfigError(f"{path}: invalid machine: {_validation_summary(e)}") from e
        try:
            return MachineDescription(
                workers=tuple(
                    Worker(w.id, w.arch, w.memory_node, w.speed_factor) for w in model.workers
                ),
                bandwidth=tuple(
                    tuple(math.inf if b is None else b for b in row) for row in model.bandwidth
                ),
                latency=tuple(tuple(row) for row in model.latency),
                capacities=tuple(model.capacities or ()),
            )
        except ValueError as e:
            raise ConfigError(f"{path}: invalid machine: {e}") from e


class JsonPerfModelRepository(PerfModelRepository):
    """Performance models as JSON objects keyed by "codelet/arch"."""

    def load(self, path: str) -> PerfModel:
        try:
            model = PerfModelFile.model_validate_json(read_text(Path(path)))
        except ValidationError as e:
            raise ConfigError(f"{path}: invalid performance model: "
                              f"{_validation_summary(e)}") from e
        entries = {}
        for key, entry in model.root.items():
            codelet, _, arch_name = key.rpartition("/")
            arch = Target.parse(arch_name)
            if not codelet or arch is None:
                raise ConfigError(f"{path}: bad performance model key '{key}'")
            entries[(codelet, arch)] = CostEntry(entry.base_seconds, entry.seconds_per_byte)
        return PerfModel(entries)


def event_to_json(event: TraceEvent) -> str:
    return TraceLine.model_validate({"kind": event.KIND, **asdict(event)}).model_dump_json()


class JsonLinesTraceRepository(TraceRepository):
    """Traces as JSON lines, one event per line."""

    def save(self, trace: Trace, path: str) -> None:
        lines = [event_to_json(event) + "\n" for event in trace.events]
        Path(path).write_text("".join(lines), encoding="utf-8")

    def load(self, path: str) -> Trace:
        try:
            text = read_text(Path(path), TraceValidationError)
        except OSError as e:
            raise TraceValidationError(f"{path}: cannot read trace: {e}") from e
        trace = Trace()
        for number, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                model = TraceLine.model_validate_json(line).root
                cls = _EVENT_TYPES[model.kind]
                trace.record(cls(**model.model_dump(exclude={"kind"})))
            except (ValidationError, ValueError) as e:
                raise TraceValidationError(f"{path}:{number}: malformed trace event") from e
        return trace


def diagnostics_to_json(diagnostics: List[Diagnostic]) -> str:
    return DiagnosticList.model_validate([
        {
            "file": d.location.file,
            "line": d.location.line,
            "column": d.location.column,
            "severity": d.severity.value,
            "code": d.code,
            "message": d.message,
        }
        for d in diagnostics
    ]).model_dump_json(indent=2)
