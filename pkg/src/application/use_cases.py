# src/application/use_cases.py
"""Use cases for the TaskC compiler and simulator."""

import logging
import math
from typing import Dict, List, Optional, Set, Tuple

from src.application.dataflow import check_program
from src.application.dtos import (
    BuildRequestDTO,
    BuildResultDTO,
    CheckResultDTO,
    CompileRequestDTO,
    RunRequestDTO,
    TraceSummaryDTO,
)
from src.application.lexer import tokenize
from src.application.lowering import emit_program
from src.application.parser import parse
from src.application.printer import print_unit
from src.application.repositories import (
    ArtifactRepository,
    KernelSourceRepository,
    MachineRepository,
    PerfModelRepository,
    SourceRepository,
    TraceRepository,
)
from src.application.scheduling import make_policy
from src.application.sema import analyze
from src.application.simulator import RunResult, Simulator
from src.domain.ast import FunctionDecl, TranslationUnit
from src.domain.entities import ProgramModel
from src.domain.exceptions import (
    CompileError,
    ConfigError,
    LexError,
    LoweringError,
    ParseError,
    TraceValidationError,
)
from src.domain.machine import CostEntry, MachineDescription, PerfModel, Trace
from src.domain.program import TaskProgram
from src.domain.value_objects import Diagnostic, SourceLocation, sort_diagnostics

logger = logging.getLogger(__name__)

DEFAULT_COST = CostEntry(base_seconds=1e-6, seconds_per_byte=1e-9)


def parse_file(text: str, file: str) -> Tuple[Optional[TranslationUnit], Optional[Diagnostic]]:
    """Parse source text; a lexical or syntax error becomes one error diagnostic."""
    try:
        return parse(tokenize(text, file), file), None
    except LexError as e:
        code = "E_LEX"
        error = e
    except ParseError as e:
        code = "E_PARSE"
        error = e
    location = error.location or SourceLocation(file)
    return None, Diagnostic.error(location, error.message, code)


def functions_with_errors(unit: TranslationUnit, diagnostics: List[Diagnostic]) -> Set[str]:
    """Names of function definitions whose lines hold an error diagnostic."""
    error_lines = [
        d.location.line for d in diagnostics if d.is_error and d.location.file == unit.file
    ]
    starts = sorted(item.location.line for item in unit.items)
    failed = set()
    for item in unit.items:
        if not isinstance(item, FunctionDecl) or item.body is None:
            continue
        first = item.location.line
        end = next((s for s in starts if s > first), math.inf)
        if any(first <= line < end for line in error_lines):
            failed.add(item.name)
    return failed


def default_perf_model(program: TaskProgram) -> PerfModel:
    """Same affine cost for every implementation the program provides."""
    pairs = [(c.name, impl.target) for c in program.codelets for impl in c.impls]
    return PerfModel.uniform(pairs, DEFAULT_COST)


class CheckProgramUseCase:
    """Use case for running the front end and every static check."""

    def __init__(self, source_repository: SourceRepository):
        self._source_repository = source_repository

    def execute(self, request: CompileRequestDTO) -> CheckResultDTO:
        """Execute the check use case."""
        # 1. Read and parse
        text = self._source_repository.read(request.file)
        unit, failure = parse_file(text, request.file)
        if failure is not None:
            return CheckResultDTO([failure], werror=request.werror)

        # 2. Semantic analysis
        model, diagnostics = analyze(unit, request.config, request.entry)

        # 3. Registration dataflow check on functions that passed analysis
        if request.registration_check:
            failed = functions_with_errors(unit, diagnostics)
            diagnostics = diagnostics + check_program(model, failed)

        diagnostics = sort_diagnostics(diagnostics)
        logger.info(f"Checked {request.file}: {len(diagnostics)} diagnostics")
        return CheckResultDTO(diagnostics, model, werror=request.werror)


class BuildProgramUseCase:
    """Use case for lowering a checked program into a self-contained artifact."""

    def __init__(
        self,
        source_repository: SourceRepository,
        kernel_repository: KernelSourceRepository,
        artifact_repository: ArtifactRepository,
    ):
        self._check = CheckProgramUseCase(source_repository)
        self._kernel_repository = kernel_repository
        self._artifact_repository = artifact_repository

    def execute(self, request: BuildRequestDTO) -> BuildResultDTO:
        """Execute the build use case."""
        # 1. Check; nothing is written when it fails
        check = self._check.execute(request.compile)
        if check.failed:
            return BuildResultDTO(check)

        # 2. Embed kernels and lower
        kernel_sources = self._kernel_sources(check.model, request.compile.file)
        try:
            program = emit_program(check.model, kernel_sources)
        except (CompileError, LoweringError) as e:
            code = "E_KERNEL" if isinstance(e, CompileError) else "E_LOWERING"
            location = e.location or SourceLocation(request.compile.file)
            check.diagnostics = sort_diagnostics(
                check.diagnostics + [Diagnostic.error(location, e.message, code)]
            )
            return BuildResultDTO(check)

        # 3. Write the artifact
        self._artifact_repository.save(program, request.output)
        logger.info(f"Wrote artifact {request.output}")
        return BuildResultDTO(check, program, request.output)

    def _kernel_sources(self, model: ProgramModel, source_file: str) -> Dict[str, str]:
        sources = {}
        for impl in model.impls:
            binding = impl.kernel_binding
            if binding is None or binding.file in sources:
                continue
            text = self._kernel_repository.find(binding.file, source_file)
            if text is not None:
                sources[binding.file] = text
        return sources


class RunProgramUseCase:
    """Use case for simulating an artifact on a machine."""

    def __init__(
        self,
        artifact_repository: ArtifactRepository,
        machine_repository: MachineRepository,
        perf_repository: PerfModelRepository,
        trace_repository: TraceRepository,
    ):
        self._artifact_repository = artifact_repository
        self._machine_repository = machine_repository
        self._perf_repository = perf_repository
        self._trace_repository = trace_repository

    def execute(self, request: RunRequestDTO) -> RunResult:
        """Execute the run use case."""
        # 1. Load inputs, falling back to the single-CPU machine and default costs
        program = self._artifact_repository.load(request.artifact)
        machine = (
            MachineDescription.single_cpu()
            if request.machine is None
            else self._machine_repository.load(request.machine)
        )
        perf = (
            default_perf_model(program)
            if request.perf is None
            else self._perf_repository.load(request.perf)
        )
        try:
            policy = make_policy(request.sched)
        except ValueError as e:
            raise ConfigError(str(e)) from e

        # 2. Simulate
        result = Simulator(
            program, machine, perf, policy, request.check_invariants, request.max_steps
        ).run()

        # 3. Persist the trace
        if request.trace is not None:
            self._trace_repository.save(result.trace, request.trace)
        return result


def summarize(trace: Trace) -> TraceSummaryDTO:
    """Statistics of a trace that satisfies the trace invariants."""
    violations = trace.violations()
    if violations:
        raise TraceValidationError("; ".join(violations))
    busy: Dict[int, float] = {}
    for event in trace.tasks:
        busy[event.worker] = busy.get(event.worker, 0.0) + (event.end - event.start)
    moved: Dict[Tuple[int, int], int] = {}
    for event in trace.transfers:
        link = (event.src, event.dst)
        moved[link] = moved.get(link, 0) + event.nbytes
    return TraceSummaryDTO(
        busy_by_worker=dict(sorted(busy.items())),
        bytes_by_link=dict(sorted(moved.items())),
        makespan=trace.makespan,
        task_count=len(trace.tasks),
        transfer_count=len(trace.transfers),
        error_count=len(trace.errors),
    )


class SummarizeTraceUseCase:
    """Use case for validating and summarizing a trace file."""

    def __init__(self, trace_repository: TraceRepository):
        self._trace_repository = trace_repository

    def execute(self, path: str) -> TraceSummaryDTO:
        """Execute the trace summary use case."""
        return summarize(self._trace_repository.load(path))


class StripProgramUseCase:
    """Use case for printing the annotation-free sequential program."""

    def __init__(self, source_repository: SourceRepository):
        self._source_repository = source_repository

    def execute(self, file: str) -> Tuple[Optional[str], Optional[Diagnostic]]:
        """Execute the strip use case."""
        unit, failure = parse_file(self._source_repository.read(file), file)
        if failure is not None:
            return None, failure
        return print_unit(unit, strip_annotations=True), None
