# src/application/simulator.py
"""Discrete-event simulation of a heterogeneous machine running a TaskProgram."""

import heapq
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Set, Tuple

import networkx as nx

from src.application.evaluator import evaluate_kernel
from src.application.marshalling import unpack_scalars
from src.application.runtime import MainInterpreter, TaskRuntime, merge_modes
from src.application.scheduling import (
    HeftDecision,
    Placement,
    PlannedTransfer,
    SchedulerView,
    SchedulingPolicy,
    build_task_dag,
    estimate_transfer,
)
from src.application.services import ExecutionEngine
from src.domain.entities import DataHandle, HandleSnapshot, TaskInstance, TaskState
from src.domain.exceptions import (
    ConfigError,
    InvariantViolation,
    KernelFault,
    RuntimeFailure,
    TaskCError,
)
from src.domain.machine import (
    MachineDescription,
    PerfModel,
    TaskEvent,
    Trace,
    TransferEvent,
    Worker,
)
from src.domain.program import CodeletPlan, TaskProgram
from src.domain.value_objects import TargetConfig

logger = logging.getLogger(__name__)


@dataclass
class RunResult:
    """Outcome of one simulation."""
    status: str
    trace: Trace
    image: Dict[int, HandleSnapshot] = field(default_factory=dict)
    error: Optional[RuntimeFailure] = None
    decisions: List[HeftDecision] = field(default_factory=list)
    live_handles: int = 0
    live_allocations: int = 0
    config: TargetConfig = field(default_factory=TargetConfig)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def makespan(self) -> float:
        return self.trace.makespan


def check_machine(program: TaskProgram, machine: MachineDescription, perf: PerfModel) -> None:
    """Every codelet needs a compatible worker and a cost entry per usable arch."""
    for codelet in program.codelets:
        targets = [impl.target for impl in codelet.impls]
        workers = machine.workers_for(targets)
        if not workers:
            raise ConfigError(
                f"no worker can execute codelet '{codelet.name}' "
                f"(implementations: {', '.join(t.value for t in targets)})"
            )
        for arch in sorted({w.arch for w in workers}, key=lambda t: t.value):
            if (codelet.name, arch) not in perf.entries:
                raise ConfigError(f"no cost entry for '{codelet.name}/{arch.value}'")


class Simulator(ExecutionEngine, SchedulerView):
    """Virtual-time execution engine.

    Kernel data effects are computed when a task is dispatched; its interval in the
    trace comes from the performance model.
    """

    def __init__(
        self,
        program: TaskProgram,
        machine: MachineDescription,
        perf: PerfModel,
        policy: SchedulingPolicy,
        check_invariants: bool = True,
        max_steps: Optional[int] = None,
    ):
        self._program = program
        self._machine = machine
        self._perf = perf
        self._policy = policy
        self._check_invariants = check_invariants
        self._max_steps = max_steps
        self._config = program.metadata.config
        self.trace = Trace()
        self.runtime = TaskRuntime(self._config, self.trace, self)
        self._now = 0.0
        self._worker_free = [0.0] * len(machine.workers)
        self._link_free: Dict[Tuple[int, int], float] = {}
        self._arrivals: Dict[Tuple[int, int], float] = {}
        self._events: List[Tuple[float, int, int]] = []
        self._sequence = 0
        self._ready: Set[int] = set()
        self._dependents: Dict[int, List[int]] = {}
        self._faults: Dict[int, str] = {}

    # ExecutionEngine

    @property
    def now(self) -> float:
        return self._now

    def task_submitted(self, task: TaskInstance) -> None:
        for dep in task.deps:
            self._dependents.setdefault(dep, []).append(task.id)
        self._try_release(task)

    def advance_until(self, predicate: Callable[[], bool]) -> None:
        while True:
            self._dispatch()
            if predicate():
                return
            if not self._events:
                raise InvariantViolation("simulation stalled with unfinished tasks")
            self._complete_next()

    def fetch_to_host(self, handle: DataHandle) -> None:
        source = handle.source_for(0)
        if source is not None:
            transfer = self._plan_transfer(handle, source, 0, self._now)
            self._commit_transfer(transfer)
            handle.fetch(0)
            self._now = max(self._now, transfer.end)
        self._assert_coherence()

    # SchedulerView

    @property
    def machine(self) -> MachineDescription:
        return self._machine

    @property
    def perf(self) -> PerfModel:
        return self._perf

    def compatible_workers(self, task: TaskInstance) -> List[Worker]:
        codelet = self._program.codelet(task.codelet)
        return self._machine.workers_for(impl.target for impl in codelet.impls)

    def worker_available(self, worker: Worker) -> float:
        return max(self._worker_free[worker.id], self._now)

    def task_dag(self) -> nx.DiGraph:
        tasks = list(self.runtime.tasks.values())
        return build_task_dag(
            tasks, self.runtime.handles, {t.id: self.compatible_workers(t) for t in tasks}
        )

    def task_bytes(self, task: TaskInstance) -> int:
        return sum(self.runtime.handles[h].nbytes for h in merge_modes(task.args))

    def placement(self, task: TaskInstance, worker: Worker) -> Placement:
        node = worker.memory_node
        data_ready = self._now
        transfers = []
        link_free = dict(self._link_free)
        for handle_id, mode in sorted(merge_modes(task.args).items()):
            handle = self.runtime.handles[handle_id]
            if not mode.reads:
                continue
            source = handle.source_for(node)
            if source is None:
                data_ready = max(data_ready, self._arrivals.get((handle_id, node), 0.0))
                continue
            transfer = self._plan_transfer(handle, source, node, self._now, link_free)
            link_free[(source, node)] = transfer.end
            transfers.append(transfer)
            data_ready = max(data_ready, transfer.end)
        start = max(self._worker_free[worker.id], data_ready)
        end = start + self._perf.cost(task.codelet, worker, self.task_bytes(task))
        return Placement(task.id, worker.id, start, end, tuple(transfers))

    # Simulation

    def run(self) -> RunResult:
        check_machine(self._program, self._machine, self._perf)
        interpreter = MainInterpreter(self._program, self.runtime)
        status, error = "ok", None
        try:
            interpreter.execute()
            self.runtime.finish()
        except RuntimeFailure as e:
            status, error = "failed", e
        except TaskCError as e:
            status = "failed"
            error = self.runtime.report_fault(e.message, self._program.metadata.source_file)
        decisions = list(getattr(self._policy, "decisions", []))
        result = RunResult(
            status=status,
            trace=self.trace,
            image=dict(sorted(self.runtime.snapshots.items())),
            error=error,
            decisions=decisions,
            live_handles=len(self.runtime.registry),
            live_allocations=len(self.runtime.heap.live),
            config=self._config,
        )
        logger.info(
            f"Simulation {status}: {len(self.runtime.tasks)} tasks, "
            f"makespan {result.makespan!r}"
        )
        return result

    def _try_release(self, task: TaskInstance) -> None:
        """Blocked task whose dependencies all finished becomes ready (or is poisoned)."""
        deps = [self.runtime.tasks[d] for d in task.deps]
        if not all(d.is_finished for d in deps):
            return
        failed = sorted(d.id for d in deps if d.state is TaskState.FAILED)
        if failed:
            task.fail(f"dependency {failed[0]} failed")
            for dependent in self._dependents.get(task.id, []):
                candidate = self.runtime.tasks[dependent]
                if candidate.state is TaskState.BLOCKED:
                    self._try_release(candidate)
            return
        task.mark_ready()
        self._ready.add(task.id)

    def _dispatch(self) -> None:
        if not self._ready:
            return
        ready = [self.runtime.tasks[t] for t in sorted(self._ready)]
        self._ready.clear()
        for task in self._policy.order(ready, self):
            self._commit(task, self._policy.choose_worker(task, self))

    def _commit(self, task: TaskInstance, placement: Placement) -> None:
        worker = self._machine.workers[placement.worker]
        node = worker.memory_node
        for transfer in placement.transfers:
            self._commit_transfer(transfer)
        task.start(worker.id)
        self._worker_free[worker.id] = placement.end
        self.trace.record(TaskEvent(task.id, task.codelet, worker.id,
                                    placement.start, placement.end))
        logger.debug(
            f"Task {task.id} '{task.codelet}' on worker {worker.id} "
            f"[{placement.start}, {placement.end}]"
        )
        codelet = self._program.codelet(task.codelet)
        modes = merge_modes(task.args)
        for handle_id, mode in sorted(modes.items()):
            handle = self.runtime.handles[handle_id]
            if mode.reads:
                handle.fetch(node)
            else:
                handle.view_on(node)
        backup = {
            h: self.runtime.handles[h].view_on(node).copy() for h, m in modes.items() if m.writes
        }
        try:
            self._execute(task, codelet, worker)
        except KernelFault as e:
            # A faulting kernel leaves no partial writes behind.
            for handle_id, saved in backup.items():
                self.runtime.handles[handle_id].view_on(node)[:] = saved
            self._faults[task.id] = e.message
        else:
            for handle_id, mode in sorted(modes.items()):
                if mode.writes:
                    self.runtime.handles[handle_id].write(node)
                    self._arrivals = {
                        key: t for key, t in self._arrivals.items() if key[0] != handle_id
                    }
                    self._arrivals[(handle_id, node)] = placement.end
        self._push_event(placement.end, task.id)
        self._assert_coherence()

    def _execute(self, task: TaskInstance, codelet: CodeletPlan, worker: Worker) -> None:
        impl = codelet.impl_for(worker.arch)
        ir = impl.ir
        wrapper = impl.wrapper
        scalar_values = unpack_scalars(wrapper.scalar_pack, task.scalar_pack, self._config)
        scalars = {
            param.name: scalar_values[slot.param]
            for param, slot in zip(
                [p for p in ir.params if p.kind == "scalar"], wrapper.scalar_pack
            )
        }
        buffers = {}
        for param, slot, arg in zip(ir.buffer_params, wrapper.buffer_slots, task.args):
            raw = self.runtime.handles[arg.handle].view_on(worker.memory_node)
            dtype = slot.elem_type.dtype(self._config)
            if raw.nbytes % dtype.itemsize:
                raise KernelFault(
                    f"buffer '{slot.param}' of {raw.nbytes} bytes is not a whole number "
                    f"of {slot.elem_type.value} elements"
                )
            buffers[param.name] = raw.view(dtype)
        group_size = impl.embedded.group_size if impl.embedded is not None else 1
        evaluate_kernel(ir, buffers, scalars, self._config, group_size, self._max_steps)

    def _plan_transfer(
        self,
        handle: DataHandle,
        src: int,
        dst: int,
        earliest: float,
        link_free: Optional[Dict[Tuple[int, int], float]] = None,
    ) -> PlannedTransfer:
        """One transfer per directed link at a time; unpinned data leaves a node
        only once that node's workers are idle."""
        link_free = self._link_free if link_free is None else link_free
        start = max(earliest, link_free.get((src, dst), 0.0),
                    self._arrivals.get((handle.id, src), 0.0))
        if not handle.pinned:
            start = max([start] + [
                self._worker_free[w.id] for w in self._machine.workers if w.memory_node == src
            ])
        end = start + estimate_transfer(handle, src, dst, self._machine)
        return PlannedTransfer(handle.id, src, dst, handle.nbytes, start, end)

    def _commit_transfer(self, transfer: PlannedTransfer) -> None:
        self._link_free[(transfer.src, transfer.dst)] = transfer.end
        self._arrivals[(transfer.handle, transfer.dst)] = transfer.end
        self.trace.record(TransferEvent(
            transfer.handle, transfer.src, transfer.dst, transfer.nbytes,
            transfer.start, transfer.end,
        ))
        logger.debug(
            f"Transfer of handle {transfer.handle} {transfer.src}->{transfer.dst} "
            f"[{transfer.start}, {transfer.end}]"
        )

    def _push_event(self, time: float, task_id: int) -> None:
        heapq.heappush(self._events, (time, self._sequence, task_id))
        self._sequence += 1

    def _complete_next(self) -> None:
        """Finish every task whose end event carries the earliest time."""
        time = self._events[0][0]
        finished = []
        while self._events and self._events[0][0] == time:
            finished.append(heapq.heappop(self._events)[2])
        self._now = max(self._now, time)
        for task_id in sorted(finished):
            task = self.runtime.tasks[task_id]
            fault = self._faults.pop(task_id, None)
            if fault is None:
                task.complete()
            else:
                task.fail(fault)
                self.runtime.report_fault(f"task '{task.codelet}' failed: {fault}", task.site)
            for dependent in self._dependents.get(task_id, []):
                candidate = self.runtime.tasks[dependent]
                if candidate.state is TaskState.BLOCKED:
                    self._try_release(candidate)

    def _assert_coherence(self) -> None:
        if not self._check_invariants:
            return
        for handle in self.runtime.registry.handles:
            handle.check_coherence()
