# src/cli/dependencies.py
"""Dependency wiring for CLI commands."""

from functools import lru_cache

from src.application.repositories import (
    ArtifactRepository,
    KernelSourceRepository,
    MachineRepository,
    PerfModelRepository,
    SourceRepository,
    TraceRepository,
)
from src.application.use_cases import (
    BuildProgramUseCase,
    CheckProgramUseCase,
    RunProgramUseCase,
    StripProgramUseCase,
    SummarizeTraceUseCase,
)
from src.infrastructure.repositories import (
    FileKernelSourceRepository,
    FileSourceRepository,
    JsonArtifactRepository,
    JsonLinesTraceRepository,
    JsonMachineRepository,
    JsonPerfModelRepository,
)


# Repository singletons
@lru_cache()
def get_source_repository() -> SourceRepository:
    """Get source repository instance."""
    return FileSourceRepository()


@lru_cache()
def get_kernel_source_repository() -> KernelSourceRepository:
    """Get kernel source repository instance."""
    return FileKernelSourceRepository()


@lru_cache()
def get_artifact_repository() -> ArtifactRepository:
    """Get artifact repository instance."""
    return JsonArtifactRepository()


@lru_cache()
def get_machine_repository() -> MachineRepository:
    """Get machine repository instance."""
    return JsonMachineRepository()


@lru_cache()
def get_perf_repository() -> PerfModelRepository:
    """Get performance model repository instance."""
    return JsonPerfModelRepository()


@lru_cache()
def get_trace_repository() -> TraceRepository:
    """Get trace repository instance."""
    return JsonLinesTraceRepository()


# Use case factories
def get_check_use_case() -> CheckProgramUseCase:
    return CheckProgramUseCase(source_repository=get_source_repository())


def get_build_use_case() -> BuildProgramUseCase:
    return BuildProgramUseCase(
        source_repository=get_source_repository(),
        kernel_repository=get_kernel_source_repository(),
        artifact_repository=get_artifact_repository(),
    )


def get_run_use_case() -> RunProgramUseCase:
    return RunProgramUseCase(
        artifact_repository=get_artifact_repository(),
        machine_repository=get_machine_repository(),
        perf_repository=get_perf_repository(),
        trace_repository=get_trace_repository(),
    )


def get_trace_summary_use_case() -> SummarizeTraceUseCase:
    return SummarizeTraceUseCase(trace_repository=get_trace_repository())


def get_strip_use_case() -> StripProgramUseCase:
    return StripProgramUseCase(source_repository=get_source_repository())
