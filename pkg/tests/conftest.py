# tests/conftest.py
"""Shared helpers: compiling snippets, building programs and machines."""

import math
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import pytest

from src.application.lowering import emit_program
from src.application.parser import parse_source
from src.application.sema import analyze
from src.domain.entities import ProgramModel
from src.domain.machine import CostEntry, MachineDescription, PerfModel, Worker
from src.domain.program import TaskProgram
from src.domain.value_objects import Diagnostic, Target, TargetConfig

CORPUS = Path(__file__).parent / "corpus"


def corpus_text(name: str) -> str:
    return (CORPUS / name).read_text(encoding="utf-8")


def compile_source(
    text: str,
    file: str = "test.tc",
    config: Optional[TargetConfig] = None,
    entry: str = "main",
) -> Tuple[ProgramModel, List[Diagnostic]]:
    """Parse and analyze; returns the model and every semantic diagnostic."""
    unit = parse_source(text, file)
    return analyze(unit, config or TargetConfig(), entry)


def build_program(
    text: str,
    kernels: Optional[Mapping[str, str]] = None,
    file: str = "test.tc",
    config: Optional[TargetConfig] = None,
    entry: str = "main",
) -> TaskProgram:
    model, diagnostics = compile_source(text, file, config, entry)
    errors = [str(d) for d in diagnostics if d.is_error]
    assert not errors, errors
    return emit_program(model, kernels or {})


def make_machine(
    cpus: int = 1,
    devices: int = 0,
    latency: float = 1e-5,
    bandwidth: float = 1e9,
) -> MachineDescription:
    """CPU workers on node 0, then one OpenCL device per extra node."""
    workers = [Worker(i, Target.CPU, 0) for i in range(cpus)]
    workers += [Worker(cpus + d, Target.OPENCL, d + 1) for d in range(devices)]
    size = devices + 1
    return MachineDescription(
        workers=tuple(workers),
        bandwidth=tuple(
            tuple(math.inf if i == j else bandwidth for j in range(size)) for i in range(size)
        ),
        latency=tuple(
            tuple(0.0 if i == j else latency for j in range(size)) for i in range(size)
        ),
    )


def make_perf(costs: Dict[Tuple[str, Target], float]) -> PerfModel:
    return PerfModel({key: CostEntry(seconds) for key, seconds in costs.items()})


def uniform_perf(program: TaskProgram, seconds: float = 1e-6) -> PerfModel:
    pairs = [(c.name, impl.target) for c in program.codelets for impl in c.impls]
    return PerfModel.uniform(pairs, CostEntry(seconds))


@pytest.fixture
def vector_scale_program() -> TaskProgram:
    return build_program(
        corpus_text("vector_scale.tc"),
        {"vector_scale.cl": corpus_text("vector_scale.cl")},
        file="vector_scale.tc",
    )


@pytest.fixture
def corpus_dir(tmp_path: Path) -> Path:
    """Writable copy of the test corpus."""
    for source in CORPUS.iterdir():
        (tmp_path / source.name).write_text(source.read_text(encoding="utf-8"),
                                            encoding="utf-8")
    return tmp_path
