# src/application/services.py
"""Service interfaces (ports) between the runtime and its execution engine."""

from abc import ABC, abstractmethod
from typing import Callable

from src.domain.entities import DataHandle, TaskInstance
from src.domain.value_objects import BaseType


class HostMemory(ABC):
    """Interface for simulated host memory seen by the entry procedure."""

    @abstractmethod
    def load(self, address: int, index: int, ctype: BaseType):
        """Read element `index` of the buffer starting at `address`."""
        pass

    @abstractmethod
    def store(self, address: int, index: int, ctype: BaseType, value) -> None:
        """Write element `index` of the buffer starting at `address`."""
        pass

    @abstractmethod
    def malloc(self, nbytes: int) -> int:
        """Allocate unpinned memory and return its address."""
        pass

    @abstractmethod
    def free(self, address: int) -> None:
        """Release memory returned by `malloc`."""
        pass


class ExecutionEngine(ABC):
    """Interface for whatever executes submitted tasks and moves data."""

    @property
    @abstractmethod
    def now(self) -> float:
        """Current virtual time."""
        pass

    @abstractmethod
    def task_submitted(self, task: TaskInstance) -> None:
        """Take a freshly submitted task into account."""
        pass

    @abstractmethod
    def advance_until(self, predicate: Callable[[], bool]) -> None:
        """Execute tasks until `predicate` holds."""
        pass

    @abstractmethod
    def fetch_to_host(self, handle: DataHandle) -> None:
        """Make main memory hold a valid copy of the handle's data."""
        pass
