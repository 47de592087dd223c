# src/application/scheduling.py
"""Scheduling policies (eager, HEFT) and the task-graph ranks they rely on."""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from statistics import fmean
from typing import Dict, Iterable, List, Mapping, Tuple

import networkx as nx

from src.domain.entities import DataHandle, TaskInstance
from src.domain.machine import MachineDescription, PerfModel, Worker

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlannedTransfer:
    handle: int
    src: int
    dst: int
    nbytes: int
    start: float
    end: float


@dataclass(frozen=True)
class Placement:
    """Timing of a task if it were dispatched to `worker` now."""
    task: int
    worker: int
    start: float
    end: float
    transfers: Tuple[PlannedTransfer, ...] = ()

    def __post_init__(self) -> None:
        if self.end < self.start:
            raise ValueError("Placement ends before it starts")


@dataclass(frozen=True)
class HeftDecision:
    """EFT of every compatible worker at the moment a task was placed."""
    task: int
    worker: int
    eft_by_worker: Dict[int, float] = field(default_factory=dict)


class SchedulerView(ABC):
    """What a policy may observe of the simulation."""

    @property
    @abstractmethod
    def machine(self) -> MachineDescription:
        pass

    @property
    @abstractmethod
    def perf(self) -> PerfModel:
        pass

    @abstractmethod
    def compatible_workers(self, task: TaskInstance) -> List[Worker]:
        """Workers whose arch has an implementation of the task's codelet."""
        pass

    @abstractmethod
    def worker_available(self, worker: Worker) -> float:
        """Virtual time at which the worker becomes idle."""
        pass

    @abstractmethod
    def placement(self, task: TaskInstance, worker: Worker) -> Placement:
        """Transfers and execution interval of the task on the worker."""
        pass

    @abstractmethod
    def task_dag(self) -> nx.DiGraph:
        """Dependency graph of every task submitted so far."""
        pass

    @abstractmethod
    def task_bytes(self, task: TaskInstance) -> int:
        """Total bytes of the distinct handles the task accesses."""
        pass


class SchedulingPolicy(ABC):
    """Orders ready tasks and picks a worker for each."""

    name = "abstract"

    @abstractmethod
    def order(self, ready: List[TaskInstance], view: SchedulerView) -> List[TaskInstance]:
        pass

    @abstractmethod
    def choose_worker(self, task: TaskInstance, view: SchedulerView) -> Placement:
        pass


class EagerPolicy(SchedulingPolicy):
    """FIFO by task id to the earliest-available compatible worker."""

    name = "eager"

    def order(self, ready: List[TaskInstance], view: SchedulerView) -> List[TaskInstance]:
        return sorted(ready, key=lambda t: t.id)

    def choose_worker(self, task: TaskInstance, view: SchedulerView) -> Placement:
        worker = min(
            view.compatible_workers(task),
            key=lambda w: (view.worker_available(w), w.id),
        )
        return view.placement(task, worker)


class HeftPolicy(SchedulingPolicy):
    """Insertion-free HEFT: descending upward rank, minimum earliest finish time."""

    name = "heft"

    def __init__(self):
        self.decisions: List[HeftDecision] = []

    def order(self, ready: List[TaskInstance], view: SchedulerView) -> List[TaskInstance]:
        ranks = upward_rank(view.task_dag(), view.perf, view.machine)
        return sorted(ready, key=lambda t: (-ranks[t.id], t.id))

    def choose_worker(self, task: TaskInstance, view: SchedulerView) -> Placement:
        placements = {w.id: view.placement(task, w) for w in view.compatible_workers(task)}
        best = min(placements.values(), key=lambda p: (p.end, p.worker))
        self.decisions.append(HeftDecision(
            task.id, best.worker, {w: p.end for w, p in placements.items()}
        ))
        logger.debug(f"HEFT placed task {task.id} on worker {best.worker} (EFT {best.end})")
        return best


POLICIES = {EagerPolicy.name: EagerPolicy, HeftPolicy.name: HeftPolicy}


def make_policy(name: str) -> SchedulingPolicy:
    try:
        return POLICIES[name]()
    except KeyError:
        raise ValueError(f"Unknown scheduling policy '{name}'") from None


# Task graph

def build_task_dag(
    tasks: Iterable[TaskInstance],
    handles: Mapping[int, DataHandle],
    compatible: Mapping[int, List[Worker]],
) -> nx.DiGraph:
    """Nodes carry the task and its compatible workers; edge `bytes` is the size
    of the handles both ends access."""
    dag = nx.DiGraph()
    by_id = {}
    for task in tasks:
        by_id[task.id] = task
        nbytes = sum(handles[h].nbytes for h in {a.handle for a in task.args})
        dag.add_node(task.id, task=task, nbytes=nbytes, workers=compatible[task.id])
    for task in by_id.values():
        mine = {a.handle for a in task.args}
        for dep in sorted(task.deps):
            shared = mine & {a.handle for a in by_id[dep].args}
            dag.add_edge(dep, task.id, bytes=sum(handles[h].nbytes for h in shared))
    return dag


def estimate_transfer(
    handle: DataHandle, src: int, dst: int, machine: MachineDescription
) -> float:
    """Seconds to make `dst` hold the handle's data when copying from `src`."""
    if src == dst or handle.is_valid_on(dst):
        return 0.0
    return machine.transfer_time(src, dst, handle.nbytes)


def average_costs(
    dag: nx.DiGraph, perf: PerfModel, machine: MachineDescription
) -> Tuple[Dict[int, float], Dict[Tuple[int, int], float]]:
    """Mean execution cost over compatible workers and mean edge transfer cost over
    compatible worker pairs."""
    exec_cost = {}
    for task_id, data in dag.nodes(data=True):
        task = data["task"]
        exec_cost[task_id] = fmean(
            perf.cost(task.codelet, w, data["nbytes"]) for w in data["workers"]
        )
    transfer_cost = {}
    for src, dst, data in dag.edges(data=True):
        transfer_cost[(src, dst)] = fmean(
            machine.transfer_time(a.memory_node, b.memory_node, data["bytes"])
            for a in dag.nodes[src]["workers"]
            for b in dag.nodes[dst]["workers"]
        )
    return exec_cost, transfer_cost


def upward_rank_from_costs(
    dag: nx.DiGraph,
    exec_cost: Mapping[int, float],
    transfer_cost: Mapping[Tuple[int, int], float],
) -> Dict[int, float]:
    rank: Dict[int, float] = {}
    for node in reversed(list(nx.topological_sort(dag))):
        rank[node] = exec_cost[node] + max(
            (transfer_cost[(node, s)] + rank[s] for s in dag.successors(node)),
            default=0.0,
        )
    return rank


def downward_rank_from_costs(
    dag: nx.DiGraph,
    exec_cost: Mapping[int, float],
    transfer_cost: Mapping[Tuple[int, int], float],
) -> Dict[int, float]:
    rank: Dict[int, float] = {}
    for node in nx.topological_sort(dag):
        rank[node] = max(
            (rank[p] + exec_cost[p] + transfer_cost[(p, node)] for p in dag.predecessors(node)),
            default=0.0,
        )
    return rank


def upward_rank(dag: nx.DiGraph, perf: PerfModel, machine: MachineDescription) -> Dict[int, float]:
    return upward_rank_from_costs(dag, *average_costs(dag, perf, machine))


def downward_rank(
    dag: nx.DiGraph, perf: PerfModel, machine: MachineDescription
) -> Dict[int, float]:
    return downward_rank_from_costs(dag, *average_costs(dag, perf, machine))


def critical_path(dag: nx.DiGraph, perf: PerfModel, machine: MachineDescription) -> List[int]:
    """Tasks whose upward plus downward rank reaches the graph's maximum."""
    exec_cost, transfer_cost = average_costs(dag, perf, machine)
    up = upward_rank_from_costs(dag, exec_cost, transfer_cost)
    down = downward_rank_from_costs(dag, exec_cost, transfer_cost)
    if not up:
        return []
    total = {t: up[t] + down[t] for t in up}
    longest = max(total.values())
    return sorted(t for t, value in total.items() if math.isclose(value, longest, rel_tol=1e-12))
