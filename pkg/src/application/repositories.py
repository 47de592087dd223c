# src/application/repositories.py
"""Repository interfaces (ports) for the application layer."""

from abc import ABC, abstractmethod
from typing import Optional

from src.domain.machine import MachineDescription, PerfModel, Trace
from src.domain.program import TaskProgram


class SourceRepository(ABC):
    """Repository interface for TaskC source files."""

    @abstractmethod
    def read(self, path: str) -> str:
        """Return the text of a source file; OSError when unreadable."""
        pass


class KernelSourceRepository(ABC):
    """Repository interface for device kernel files named by opencl pragmas."""

    @abstractmethod
    def find(self, file: str, relative_to: str) -> Optional[str]:
        """Kernel source text, or None when the file does not exist.

        Relative names are resolved against the directory of `relative_to`.
        """
        pass


class ArtifactRepository(ABC):
    """Repository interface for lowered TaskProgram artifacts."""

    @abstractmethod
    def save(self, program: TaskProgram, path: str) -> None:
        """Write the artifact; OSError when the path is unwritable."""
        pass

    @abstractmethod
    def load(self, path: str) -> TaskProgram:
        """Read and validate an artifact (ArtifactError when malformed)."""
        pass


class MachineRepository(ABC):
    """Repository interface for machine descriptions."""

    @abstractmethod
    def load(self, path: str) -> MachineDescription:
        """Read a machine description (ConfigError when invalid)."""
        pass


class PerfModelRepository(ABC):
    """Repository interface for performance models."""

    @abstractmethod
    def load(self, path: str) -> PerfModel:
        """Read a performance model (ConfigError when invalid)."""
        pass


class TraceRepository(ABC):
    """Repository interface for simulation traces."""

    @abstractmethod
    def save(self, trace: Trace, path: str) -> None:
        """Write the trace as JSON lines."""
        pass

    @abstractmethod
    def load(self, path: str) -> Trace:
        """Read a trace (TraceValidationError when malformed)."""
        pass
