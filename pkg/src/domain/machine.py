# src/domain/machine.py
"""Simulated machine, performance model and execution trace."""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Dict, Iterable, List, Optional, Tuple, Union

if TYPE_CHECKING:
    from typing import Self

from .value_objects import Target


class MemoryKind(Enum):
    HOST = "host"
    DEVICE = "device"


@dataclass(frozen=True)
class MemoryNode:
    """Distinct address space; node 0 is main memory."""
    id: int
    kind: MemoryKind
    capacity: Optional[int] = None

    def __post_init__(self) -> None:
        if (self.id == 0) != (self.kind is MemoryKind.HOST):
            raise ValueError("Node 0 is the only host node")
        if self.capacity is not None and self.capacity < 1:
            raise ValueError("Node capacity must be positive")


@dataclass(frozen=True)
class Worker:
    id: int
    arch: Target
    memory_node: int
    speed_factor: float = 1.0

    def __post_init__(self) -> None:
        if self.speed_factor <= 0:
            raise ValueError("Speed factor must be positive")
        if (self.arch is Target.CPU) != (self.memory_node == 0):
            raise ValueError("CPU workers use node 0 and devices their own node")


@dataclass(frozen=True)
class MachineDescription:
    """Workers and the node-to-node transfer costs between their memories."""
    workers: Tuple[Worker, ...]
    bandwidth: Tuple[Tuple[float, ...], ...]
    latency: Tuple[Tuple[float, ...], ...]
    capacities: Tuple[Optional[int], ...] = ()

    def __post_init__(self) -> None:
        if not self.workers:
            raise ValueError("A machine needs at least one worker")
        size = len(self.bandwidth)
        if size < 1 or len(self.latency) != size:
            raise ValueError("Bandwidth and latency matrices must have the same size")
        for matrix in (self.bandwidth, self.latency):
            if any(len(row) != size for row in matrix):
                raise ValueError("Transfer matrices must be square")
        for i in range(size):
            if self.latency[i][i] != 0:
                raise ValueError("Intra-node latency must be zero")
            for j in range(size):
                if self.bandwidth[i][j] != self.bandwidth[j][i]:
                    raise ValueError("Bandwidth matrix must be symmetric")
                if self.latency[i][j] != self.latency[j][i]:
                    raise ValueError("Latency matrix must be symmetric")
                if i != j and (self.bandwidth[i][j] <= 0 or self.latency[i][j] < 0):
                    raise ValueError("Transfer costs must be positive")
        if [w.id for w in self.workers] != list(range(len(self.workers))):
            raise ValueError("Worker ids must be 0..n-1 in order")
        device_nodes = [w.memory_node for w in self.workers if w.arch.is_device]
        if len(set(device_nodes)) != len(device_nodes):
            raise ValueError("Each device worker needs its own memory node")
        if any(w.memory_node >= size for w in self.workers):
            raise ValueError("Worker memory node out of range")
        if self.capacities and len(self.capacities) != size:
            raise ValueError("One capacity entry per node is required")

    @classmethod
    def single_cpu(cls) -> "Self":
        return cls(
            workers=(Worker(0, Target.CPU, 0, 1.0),),
            bandwidth=((math.inf,),),
            latency=((0.0,),),
        )

    @property
    def nodes(self) -> List[MemoryNode]:
        return [
            MemoryNode(
                i,
                MemoryKind.HOST if i == 0 else MemoryKind.DEVICE,
                self.capacities[i] if self.capacities else None,
            )
            for i in range(len(self.bandwidth))
        ]

    @property
    def archs(self) -> List[Target]:
        return sorted({w.arch for w in self.workers}, key=lambda t: t.value)

    def workers_for(self, archs: Iterable[Target]) -> List[Worker]:
        wanted = set(archs)
        return [w for w in self.workers if w.arch in wanted]

    def transfer_time(self, src: int, dst: int, nbytes: int) -> float:
        if src == dst:
            return 0.0
        return self.latency[src][dst] + nbytes / self.bandwidth[src][dst]


@dataclass(frozen=True)
class CostEntry:
    """Affine execution cost in the total bytes of buffer arguments."""
    base_seconds: float
    seconds_per_byte: float = 0.0

    def __post_init__(self) -> None:
        if self.base_seconds <= 0:
            raise ValueError("Base cost must be strictly positive")
        if self.seconds_per_byte < 0:
            raise ValueError("Per-byte cost cannot be negative")

    def seconds(self, nbytes: int, speed_factor: float = 1.0) -> float:
        return (self.base_seconds + self.seconds_per_byte * nbytes) / speed_factor


@dataclass(frozen=True)
class PerfModel:
    """Execution costs keyed by (codelet name, arch)."""
    entries: Dict[Tuple[str, Target], CostEntry] = field(default_factory=dict)

    @classmethod
    def uniform(cls, pairs: Iterable[Tuple[str, Target]], entry: CostEntry) -> "Self":
        return cls({pair: entry for pair in pairs})

    def entry(self, codelet: str, arch: Target) -> CostEntry:
        try:
            return self.entries[(codelet, arch)]
        except KeyError:
            raise ValueError(f"No cost entry for '{codelet}/{arch.value}'") from None

    def cost(self, codelet: str, worker: Worker, nbytes: int) -> float:
        return self.entry(codelet, worker.arch).seconds(nbytes, worker.speed_factor)


# Trace

@dataclass(frozen=True)
class TaskEvent:
    KIND = "task"
    task: int
    codelet: str
    worker: int
    start: float
    end: float

    def __post_init__(self) -> None:
        if self.end < self.start:
            raise ValueError("Task event ends before it starts")


@dataclass(frozen=True)
class TransferEvent:
    KIND = "transfer"
    handle: int
    src: int
    dst: int
    nbytes: int
    start: float
    end: float

    def __post_init__(self) -> None:
        if self.end < self.start:
            raise ValueError("Transfer event ends before it starts")
        if self.src == self.dst:
            raise ValueError("Transfer needs two distinct nodes")


@dataclass(frozen=True)
class MemoryEvent:
    KIND = "memory"
    action: str
    var: str
    handle: Optional[int]
    address: int
    nbytes: int
    pinned: bool
    time: float


@dataclass(frozen=True)
class ErrorEvent:
    KIND = "error"
    message: str
    location: str
    time: float


TraceEvent = Union[TaskEvent, TransferEvent, MemoryEvent, ErrorEvent]


@dataclass
class Trace:
    """Ordered event records of one simulation."""
    events: List[TraceEvent] = field(default_factory=list)

    def record(self, event: TraceEvent) -> None:
        self.events.append(event)

    @property
    def tasks(self) -> List[TaskEvent]:
        return [e for e in self.events if isinstance(e, TaskEvent)]

    @property
    def transfers(self) -> List[TransferEvent]:
        return [e for e in self.events if isinstance(e, TransferEvent)]

    @property
    def memory(self) -> List[MemoryEvent]:
        return [e for e in self.events if isinstance(e, MemoryEvent)]

    @property
    def errors(self) -> List[ErrorEvent]:
        return [e for e in self.events if isinstance(e, ErrorEvent)]

    @property
    def makespan(self) -> float:
        ends = [e.end for e in self.events if isinstance(e, (TaskEvent, TransferEvent))]
        return max(ends, default=0.0)

    def violations(self) -> List[str]:
        """Overlapping intervals on a worker or on a directed link."""
        problems = []
        by_worker: Dict[int, List[TaskEvent]] = {}
        for event in self.tasks:
            by_worker.setdefault(event.worker, []).append(event)
        for worker, events in sorted(by_worker.items()):
            problems.extend(
                f"worker {worker}: tasks {a.task} and {b.task} overlap"
                for a, b in _overlapping(events)
            )
        by_link: Dict[Tuple[int, int], List[TransferEvent]] = {}
        for event in self.transfers:
            by_link.setdefault((event.src, event.dst), []).append(event)
        for (src, dst), events in sorted(by_link.items()):
            problems.extend(
                f"link {src}->{dst}: transfers of handles {a.handle} and {b.handle} overlap"
                for a, b in _overlapping(events)
            )
        return problems


def _overlapping(events):
    ordered = sorted(events, key=lambda e: (e.start, e.end))
    for previous, current in zip(ordered, ordered[1:]):
        if current.start < previous.end:
            yield previous, current
