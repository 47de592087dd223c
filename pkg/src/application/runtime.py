# src/application/runtime.py
"""Task runtime: simulated host heap, data registry, dependency inference and
the interpreter for the entry procedure's main ops."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, MutableMapping, Optional, Sequence, Tuple

import numpy as np

from src.application.evaluator import Evaluator, coerce, truthy
from src.application.marshalling import pack_scalars
from src.application.services import ExecutionEngine, HostMemory
from src.domain.entities import (
    Allocation,
    DataHandle,
    HandleArg,
    HandleSnapshot,
    TaskInstance,
    TaskState,
)
from src.domain.exceptions import (
    InvariantViolation,
    KernelFault,
    OverlapError,
    RuntimeFailure,
    SubmitError,
    TaskCError,
    UseAfterUnregisterError,
)
from src.domain.machine import ErrorEvent, MemoryEvent, Trace
from src.domain.program import (
    AcquireOp,
    AllocOp,
    Branch,
    CallTaskOp,
    CleanupEntry,
    Loop,
    Op,
    PlainStmt,
    RegisterOp,
    ReturnOp,
    ScopeCleanupOp,
    TaskProgram,
    UnregisterOp,
    WaitOp,
)
from src.domain.value_objects import AccessMode, BaseType, TargetConfig

logger = logging.getLogger(__name__)

HEAP_BASE = 0x1000
HEAP_ALIGNMENT = 64


class HostHeap:
    """Bump allocator over simulated main memory."""

    def __init__(self, base: int = HEAP_BASE, alignment: int = HEAP_ALIGNMENT):
        self._next = base
        self._alignment = alignment
        self._allocations: Dict[int, Allocation] = {}

    def allocate(self, nbytes: int, pinned: bool, var: str) -> Allocation:
        nbytes = max(nbytes, 1)
        base = self._next
        self._next += -(-nbytes // self._alignment) * self._alignment
        allocation = Allocation(base, nbytes, pinned, var, np.zeros(nbytes, dtype=np.uint8))
        self._allocations[base] = allocation
        return allocation

    def release(self, address: int) -> Allocation:
        allocation = self._allocations.get(address)
        if allocation is None or allocation.freed:
            raise KernelFault(f"free of {address:#x}, which is not an allocated block")
        allocation.free()
        return allocation

    def find(self, address: int, nbytes: int = 1) -> Optional[Allocation]:
        """Live allocation holding `nbytes` bytes at `address`."""
        for allocation in self._allocations.values():
            if not allocation.freed and allocation.contains(address, nbytes):
                return allocation
        return None

    @property
    def live(self) -> List[Allocation]:
        return [a for a in self._allocations.values() if not a.freed]

    def element(self, address: int, index: int, ctype: BaseType,
                config: TargetConfig) -> np.ndarray:
        """One-element typed view of `address[index]`."""
        size = ctype.size(config)
        start = address + index * size
        allocation = self.find(start, size)
        if allocation is None:
            raise KernelFault(f"access to {start:#x} outside any allocated block")
        return allocation.view(start, size).view(ctype.dtype(config))


class Registry:
    """Live data handles keyed by base address."""

    def __init__(self):
        self._by_base: Dict[int, DataHandle] = {}

    def add(self, handle: DataHandle) -> None:
        for other in self._by_base.values():
            if other.overlaps(handle.base, handle.nbytes):
                raise OverlapError(
                    f"registration of '{handle.var}' overlaps handle {other.id} ('{other.var}')"
                )
        self._by_base[handle.base] = handle

    def remove(self, handle: DataHandle) -> None:
        del self._by_base[handle.base]

    def lookup(self, base: int) -> Optional[DataHandle]:
        """Exact-base match only."""
        return self._by_base.get(base)

    @property
    def handles(self) -> List[DataHandle]:
        return sorted(self._by_base.values(), key=lambda h: h.id)

    def __len__(self) -> int:
        return len(self._by_base)


@dataclass
class _Access:
    """Submission history of one handle."""
    last_writer: Optional[int] = None
    readers_since: List[int] = field(default_factory=list)


def merge_modes(args: Sequence[HandleArg]) -> Dict[int, AccessMode]:
    """Combined access mode per handle for a task that may name a handle twice."""
    merged: Dict[int, AccessMode] = {}
    for arg in args:
        merged[arg.handle] = merged[arg.handle].merged(arg.mode) \
            if arg.handle in merged else arg.mode
    return merged


class TaskRuntime(HostMemory):
    """Registry, task submission and synchronization on top of an execution engine."""

    def __init__(self, config: TargetConfig, trace: Trace, engine: ExecutionEngine):
        self.config = config
        self.trace = trace
        self.engine = engine
        self.heap = HostHeap()
        self.registry = Registry()
        self.handles: Dict[int, DataHandle] = {}
        self.tasks: Dict[int, TaskInstance] = {}
        self.snapshots: Dict[int, HandleSnapshot] = {}
        self.fault: Optional[RuntimeFailure] = None
        self._history: Dict[int, _Access] = {}

    # Host memory

    def load(self, address: int, index: int, ctype: BaseType):
        return coerce(self.heap.element(address, index, ctype, self.config)[0],
                      ctype, self.config)

    def store(self, address: int, index: int, ctype: BaseType, value) -> None:
        self.heap.element(address, index, ctype, self.config)[0] = value

    def malloc(self, nbytes: int) -> int:
        if nbytes < 0:
            raise KernelFault(f"malloc of {nbytes} bytes")
        return self.scoped_alloc("malloc", nbytes, pinned=False)

    def free(self, address: int) -> None:
        allocation = self.heap.release(address)
        self._memory_event("free", allocation.var, None, allocation)

    def scoped_alloc(self, var: str, nbytes: int, pinned: bool) -> int:
        allocation = self.heap.allocate(nbytes, pinned, var)
        self._memory_event("alloc", var, None, allocation)
        return allocation.base

    def _memory_event(self, action: str, var: str, handle: Optional[int],
                      allocation: Allocation, nbytes: Optional[int] = None,
                      address: Optional[int] = None) -> None:
        self.trace.record(MemoryEvent(
            action=action,
            var=var,
            handle=handle,
            address=allocation.base if address is None else address,
            nbytes=allocation.nbytes if nbytes is None else nbytes,
            pinned=allocation.pinned,
            time=self.engine.now,
        ))

    # Registry

    def register(self, address: int, nx: int, elem_size: int, elem_type: BaseType,
                 var: str) -> DataHandle:
        nbytes = nx * elem_size
        if nx < 1:
            raise KernelFault(f"cannot register '{var}' with {nx} elements")
        allocation = self.heap.find(address, nbytes)
        if allocation is None:
            raise KernelFault(
                f"cannot register '{var}': {nbytes} bytes at {address:#x} are not allocated"
            )
        handle = DataHandle(
            id=len(self.handles),
            base=address,
            elem_size=elem_size,
            nx=nx,
            elem_type=elem_type,
            var=var,
            pinned=allocation.pinned,
            host_copy=allocation.view(address, nbytes),
        )
        self.registry.add(handle)
        self.handles[handle.id] = handle
        self._history[handle.id] = _Access()
        self._memory_event("register", var, handle.id, allocation, nbytes, address)
        logger.debug(f"Registered '{var}' as handle {handle.id} ({nx} x {elem_size} bytes)")
        return handle

    def lookup(self, base: int) -> Optional[DataHandle]:
        return self.registry.lookup(base)

    # Tasks

    def submit(self, codelet: str, scalar_pack: bytes, args: Sequence[HandleArg],
               site: str) -> TaskInstance:
        """Infer dependencies from the access history and hand the task to the engine."""
        merged = merge_modes(args)
        for handle_id in merged:
            handle = self.handles.get(handle_id)
            if handle is None or not handle.live:
                raise SubmitError(f"handle {handle_id} is not registered")
        task_id = len(self.tasks)
        deps = set()
        for handle_id, mode in merged.items():
            access = self._history[handle_id]
            if access.last_writer is not None:
                deps.add(access.last_writer)
            if mode.writes:
                deps.update(access.readers_since)
                access.last_writer = task_id
                access.readers_since = []
            else:
                access.readers_since.append(task_id)
        task = TaskInstance(task_id, codelet, scalar_pack, list(args), site, deps)
        self.tasks[task_id] = task
        logger.debug(f"Submitted task {task_id} '{codelet}' with deps {sorted(deps)}")
        self.engine.task_submitted(task)
        return task

    def report_fault(self, message: str, site: str) -> RuntimeFailure:
        """Record a fatal event; the first one is what synchronization raises."""
        failure = RuntimeFailure(message, site)
        self.trace.record(ErrorEvent(message, site, self.engine.now))
        logger.debug(f"Runtime fault at {site}: {message}")
        if self.fault is None:
            self.fault = failure
        return failure

    def _raise_fault(self) -> None:
        if self.fault is not None:
            raise self.fault

    def wait_all(self) -> None:
        self.engine.advance_until(
            lambda: all(t.is_finished for t in self.tasks.values())
        )
        self._raise_fault()

    def _users_finished(self, handle: DataHandle) -> bool:
        return all(
            task.is_finished
            for task in self.tasks.values()
            if any(arg.handle == handle.id for arg in task.args)
        )

    def acquire(self, handle: DataHandle) -> None:
        """Wait for every task using the handle, then bring its data to main memory."""
        if not handle.live:
            raise UseAfterUnregisterError(f"handle {handle.id} ('{handle.var}') was unregistered")
        self.engine.advance_until(lambda: self._users_finished(handle))
        self._raise_fault()
        self.engine.fetch_to_host(handle)

    def unregister(self, handle: DataHandle) -> None:
        self.acquire(handle)
        self.snapshots[handle.id] = self.snapshot(handle)
        handle.unregister()
        self.registry.remove(handle)
        allocation = self.heap.find(handle.base, handle.nbytes)
        self.trace.record(MemoryEvent(
            action="unregister",
            var=handle.var,
            handle=handle.id,
            address=handle.base,
            nbytes=handle.nbytes,
            pinned=handle.pinned if allocation is None else allocation.pinned,
            time=self.engine.now,
        ))

    def snapshot(self, handle: DataHandle) -> HandleSnapshot:
        return HandleSnapshot(handle.id, handle.var, handle.elem_type,
                              handle.host_copy.tobytes())

    def scoped_cleanup(self, entries: Sequence[CleanupEntry],
                       registers: Mapping[str, object]) -> None:
        """Unregister then free, entry by entry (entries come in reverse definition order)."""
        for entry in entries:
            address = registers.get(entry.var)
            if address is None:
                raise InvariantViolation(f"cleanup of unknown variable '{entry.var}'")
            if entry.unregister:
                handle = self.lookup(address)
                if handle is None:
                    raise InvariantViolation(f"cleanup of '{entry.var}', which is not registered")
                self.unregister(handle)
            if entry.free:
                self.free(address)

    def finish(self) -> None:
        """Wait for all tasks, then flush every live handle to main memory."""
        self.wait_all()
        for handle in self.registry.handles:
            self.acquire(handle)
            self.snapshots[handle.id] = self.snapshot(handle)

    @property
    def failed_tasks(self) -> List[TaskInstance]:
        return [t for t in self.tasks.values() if t.state is TaskState.FAILED]


class MainInterpreter:
    """Runs a TaskProgram's main ops as the single submitter."""

    def __init__(self, program: TaskProgram, runtime: TaskRuntime):
        self._program = program
        self._runtime = runtime
        self._config = program.metadata.config
        self._registers: MutableMapping[str, object] = {}
        self._evaluator = Evaluator(self._config, self._registers, memory=runtime)
        self._site = program.metadata.source_file

    def execute(self) -> None:
        """Run to completion; fatal events surface as RuntimeFailure."""
        try:
            self._run(self._program.main_ops)
        except RuntimeFailure:
            raise
        except TaskCError as e:
            raise self._runtime.report_fault(e.message, self._site) from e

    def _run(self, ops: Tuple[Op, ...]) -> bool:
        """True when the entry procedure returned."""
        regs = self._registers
        for op in ops:
            self._site = getattr(op, "site", "") or self._site
            if isinstance(op, PlainStmt):
                if self._evaluator.run(op.ops):
                    return True
            elif isinstance(op, Loop):
                while True:
                    if self._run(op.cond):
                        return True
                    if not truthy(regs[op.test]):
                        break
                    if self._run(op.body) or self._run(op.step):
                        return True
            elif isinstance(op, Branch):
                if self._run(op.then if truthy(regs[op.test]) else op.orelse):
                    return True
            elif isinstance(op, ReturnOp):
                return True
            elif isinstance(op, AllocOp):
                nbytes = op.count * op.elem_type.size(self._config)
                regs[op.var] = self._runtime.scoped_alloc(op.var, nbytes, op.pinned)
            elif isinstance(op, RegisterOp):
                self._runtime.register(
                    regs[op.var], int(regs[op.count]), op.elem_size, op.elem_type, op.var
                )
            elif isinstance(op, (UnregisterOp, AcquireOp)):
                handle = self._require_handle(regs[op.var])
                if isinstance(op, UnregisterOp):
                    self._runtime.unregister(handle)
                else:
                    self._runtime.acquire(handle)
            elif isinstance(op, WaitOp):
                self._runtime.wait_all()
            elif isinstance(op, CallTaskOp):
                self._call_task(op)
            elif isinstance(op, ScopeCleanupOp):
                self._runtime.scoped_cleanup(op.entries, regs)
            else:
                raise InvariantViolation(f"op '{op.OP}' is not a main op")
        return False

    def _require_handle(self, address: int) -> DataHandle:
        handle = self._runtime.lookup(address)
        if handle is None:
            raise self._runtime.report_fault("attempt to use unregistered pointer", self._site)
        return handle

    def _call_task(self, op: CallTaskOp) -> None:
        """Generated task body: handle lookups, scalar packing, one submission."""
        codelet = self._program.codelet(op.task)
        plan = codelet.body_plan
        values = dict(zip((p.name for p in codelet.params), op.args))
        handles: Dict[str, DataHandle] = {}
        for step in plan.lookups:
            handle = self._runtime.lookup(self._registers[values[step.param]])
            if handle is None:
                raise self._runtime.report_fault(step.message, op.site)
            handles[step.param] = handle
        scalars = [self._registers[values[p.name]] for p in codelet.params if not p.is_buffer]
        pack = pack_scalars(codelet.impls[0].wrapper.scalar_pack, scalars, self._config)
        args = [HandleArg(handles[p.name].id, p.mode) for p in codelet.params if p.is_buffer]
        try:
            self._runtime.submit(codelet.name, pack, args, op.site)
        except SubmitError as e:
            raise self._runtime.report_fault(plan.failure_message, op.site) from e
