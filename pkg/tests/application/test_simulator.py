# tests/application/test_simulator.py
"""Tests for the discrete-event simulator."""

import itertools
import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.application.scheduling import (
    HeftDecision,
    HeftPolicy,
    SchedulingPolicy,
    estimate_transfer,
    make_policy,
)
from src.application.simulator import Simulator, check_machine
from src.domain.exceptions import ConfigError
from src.domain.machine import CostEntry, PerfModel
from src.domain.value_objects import Target, TargetConfig
from tests.conftest import build_program, corpus_text, make_machine, make_perf, uniform_perf

CONFIG = TargetConfig()
SCALED = np.arange(1, 9, dtype=np.float32) * np.float32(3.14)
DIAMOND_IMAGE = {
    0: [2.0, 3.0, 4.0, 5.0],
    1: [4.0, 6.0, 8.0, 10.0],
    2: [5.0, 6.0, 7.0, 8.0],
    3: [9.0, 12.0, 15.0, 18.0],
}
DIAMOND_COSTS = {
    ("ta", Target.CPU): 4.0, ("ta", Target.OPENCL): 2.0,
    ("tb", Target.CPU): 2.0, ("tb", Target.OPENCL): 8.0,
    ("tc", Target.CPU): 8.0, ("tc", Target.OPENCL): 2.0,
    ("td", Target.CPU): 2.0, ("td", Target.OPENCL): 4.0,
}

STEP_LIMIT_SOURCE = (
    "void t (int *v, int n) __attribute__ ((task))\n"
    "{\n"
    "  int i;\n"
    "  for (i = 0; i < n; i++)\n"
    "    v[0] = v[0] + 1;\n"
    "}\n"
    "int main (void)\n"
    "{\n"
    "  int a[4] __attribute__ ((registered, heap_allocated));\n"
    "  int i;\n"
    "  int s = 0;\n"
    "  for (i = 0; i < 200; i++)\n"
    "    s = s + i;\n"
    "  t (a, 2);\n"
    "  t (a, 500);\n"
    "#pragma starpu wait\n"
    "  return 0;\n"
    "}\n"
)


@lru_cache(maxsize=None)
def diamond_program():
    return build_program(
        corpus_text("diamond.tc"), {"diamond.cl": corpus_text("diamond.cl")}, file="diamond.tc"
    )


@lru_cache(maxsize=None)
def vector_program():
    return build_program(
        corpus_text("vector_scale.tc"),
        {"vector_scale.cl": corpus_text("vector_scale.cl")},
        file="vector_scale.tc",
    )


def simulate(program, machine=None, perf=None, policy="eager"):
    if isinstance(policy, str):
        policy = make_policy(policy)
    return Simulator(
        program, machine or make_machine(), perf or uniform_perf(program), policy
    ).run()


def image_values(result) -> dict:
    return {h: s.values(CONFIG).tolist() for h, s in result.image.items()}


def diamond_machine():
    return make_machine(cpus=1, devices=1, latency=1.0, bandwidth=math.inf)


class ForcedPolicy(SchedulingPolicy):
    """Fixed worker per task and fixed priority among ready tasks."""

    name = "forced"

    def __init__(self, assignment, priority):
        self.assignment = assignment
        self.priority = priority

    def order(self, ready, view):
        return sorted(ready, key=lambda t: self.priority.index(t.id))

    def choose_worker(self, task, view):
        return view.placement(task, view.machine.workers[self.assignment[task.id]])


class CheckedHeft(HeftPolicy):
    """HEFT that also computes each worker's finish time from its parts."""

    def __init__(self):
        super().__init__()
        self.expected = []

    def choose_worker(self, task, view):
        expected = {}
        for worker in view.compatible_workers(task):
            node = worker.memory_node
            transfers = 0.0
            for arg in task.args:
                data = view.runtime.handles[arg.handle]
                source = data.source_for(node)
                if arg.mode.reads and source is not None:
                    transfers += estimate_transfer(data, source, node, view.machine)
            cost = view.perf.cost(task.codelet, worker, view.task_bytes(task))
            expected[worker.id] = view.worker_available(worker) + transfers + cost
        self.expected.append(expected)
        return super().choose_worker(task, view)


class TestVectorScale:
    """Tests for the vector-scale program on several machines."""

    def test_single_cpu(self):
        # Act
        result = simulate(vector_program())

        # Assert
        assert result.ok
        assert np.array_equal(result.image[0].values(CONFIG), SCALED)
        assert [(e.task, e.worker, e.start, e.end) for e in result.trace.tasks] == [
            (0, 0, 0.0, 1e-6),
        ]
        assert result.trace.transfers == []
        assert result.makespan == 1e-6

    def test_eager_keeps_the_task_on_the_first_idle_worker(self):
        result = simulate(vector_program(), make_machine(cpus=1, devices=1))
        assert [e.worker for e in result.trace.tasks] == [0]
        assert np.array_equal(result.image[0].values(CONFIG), SCALED)

    def test_heft_moves_work_to_a_faster_device(self):
        # Arrange
        perf = make_perf({
            ("scale_vector", Target.CPU): 1e-3,
            ("scale_vector", Target.OPENCL): 1e-4,
        })

        # Act
        result = simulate(vector_program(), make_machine(cpus=1, devices=1), perf, "heft")

        # Assert
        assert result.ok
        assert [e.worker for e in result.trace.tasks] == [1]
        assert [(t.src, t.dst, t.nbytes) for t in result.trace.transfers] == [
            (0, 1, 32), (1, 0, 32),
        ]
        assert result.makespan == result.trace.transfers[-1].end
        assert np.array_equal(result.image[0].values(CONFIG), SCALED)

    def test_heft_finish_time_is_availability_plus_transfers_plus_cost(self):
        # Arrange
        policy = CheckedHeft()
        perf = make_perf({
            ("scale_vector", Target.CPU): 1e-3,
            ("scale_vector", Target.OPENCL): 1e-4,
        })
        machine = make_machine(cpus=1, devices=2, latency=1e-5, bandwidth=1e8)

        # Act
        result = simulate(vector_program(), machine, perf, policy)

        # Assert
        assert result.ok
        assert len(result.decisions) == len(policy.expected) == 1
        decision, expected = result.decisions[0], policy.expected[0]
        assert decision.eft_by_worker == pytest.approx(expected)
        assert expected[1] == pytest.approx(1e-5 + 32 / 1e8 + 1e-4)
        assert decision.worker == 1

    def test_runs_are_deterministic(self):
        machine = make_machine(cpus=2, devices=1)
        first = simulate(vector_program(), machine, policy="heft")
        second = simulate(vector_program(), machine, policy="heft")
        assert first.trace.events == second.trace.events


class TestHeftDiamond:
    """HEFT on a diamond with hand-computed costs."""

    def setup_method(self):
        self.program = diamond_program()
        self.machine = diamond_machine()
        self.perf = make_perf(DIAMOND_COSTS)

    def test_schedule(self):
        # Arrange
        policy = HeftPolicy()

        # Act
        result = simulate(self.program, self.machine, self.perf, policy)

        # Assert
        assert result.ok
        assert [(e.task, e.worker, e.start, e.end) for e in result.trace.tasks] == [
            (0, 1, 1.0, 3.0), (1, 0, 4.0, 6.0), (2, 1, 3.0, 5.0), (3, 0, 7.0, 9.0),
        ]
        assert [(t.handle, t.src, t.dst, t.start, t.end) for t in result.trace.transfers] == [
            (0, 0, 1, 0.0, 1.0), (0, 1, 0, 3.0, 4.0), (2, 1, 0, 6.0, 7.0),
        ]
        assert result.makespan == 9.0
        assert result.trace.violations() == []
        assert image_values(result) == DIAMOND_IMAGE

    def test_decisions_record_every_finish_time(self):
        policy = HeftPolicy()
        result = simulate(self.program, self.machine, self.perf, policy)
        assert result.decisions == [
            HeftDecision(0, 1, {0: 4.0, 1: 3.0}),
            HeftDecision(1, 0, {0: 6.0, 1: 11.0}),
            HeftDecision(2, 1, {0: 14.0, 1: 5.0}),
            HeftDecision(3, 0, {0: 9.0, 1: 12.0}),
        ]
        for decision in result.decisions:
            assert decision.eft_by_worker[decision.worker] == min(
                decision.eft_by_worker.values()
            )

    def test_heft_matches_the_best_assignment(self):
        # Arrange
        heft = simulate(self.program, self.machine, self.perf, HeftPolicy()).makespan
        makespans = {}

        # Act
        for assignment in itertools.product((0, 1), repeat=4):
            for priority in ([0, 1, 2, 3], [0, 2, 1, 3]):
                result = simulate(self.program, self.machine, self.perf,
                                  ForcedPolicy(assignment, priority))
                assert result.ok
                assert image_values(result) == DIAMOND_IMAGE
                makespans[(assignment, tuple(priority))] = result.makespan

        # Assert
        best = min(makespans.values())
        assert heft == best == 9.0
        assert {a for (a, _), m in makespans.items() if m == best} == {(1, 0, 1, 0)}


class TestMemoryAndFailures:
    """Tests for scoped memory, fatal events and configuration checks."""

    def test_scoped_variables_are_cleaned_up_in_reverse_order(self):
        # Arrange
        program = build_program(corpus_text("scoped_matrix.tc"), file="m.tc", entry="func")

        # Act
        result = simulate(program)

        # Assert
        assert result.ok
        assert [(e.action, e.var, e.pinned) for e in result.trace.memory] == [
            ("alloc", "matrix", True),
            ("register", "matrix", True),
            ("alloc", "scratch", True),
            ("register", "scratch", True),
            ("unregister", "scratch", True),
            ("free", "scratch", True),
            ("unregister", "matrix", True),
            ("free", "matrix", True),
        ]
        assert result.trace.memory[0].nbytes == 123 * 234 * 77 * 4
        assert result.live_handles == 0
        assert result.live_allocations == 0
        assert result.image[0].values(CONFIG)[(1 * 234 + 2) * 77 + 3] == 42

    def test_unregistered_pointer_fails_the_run(self):
        program = build_program(corpus_text("unregistered_call.tc"), file="u.tc")
        result = simulate(program)
        assert result.status == "failed"
        assert str(result.error) == "u.tc:12: error: attempt to use unregistered pointer"
        assert [e.message for e in result.trace.errors] == [
            "attempt to use unregistered pointer",
        ]
        assert result.trace.tasks == []

    def test_kernel_fault_fails_the_run(self):
        # Arrange
        source = (
            "void t (int *v) __attribute__ ((task)) { v[0] = 7; v[10] = 1; }\n"
            "int main (void)\n{\n"
            "  int a[4] __attribute__ ((registered, heap_allocated));\n"
            "  t (a);\n"
            "#pragma starpu wait\n"
            "  return 0;\n}\n"
        )
        program = build_program(source, file="f.tc")

        # Act
        result = simulate(program)

        # Assert
        assert result.status == "failed"
        assert result.error.message.startswith("task 't' failed: index 10 out of bounds")
        assert result.error.site == "f.tc:5"

    def test_local_arrays_are_released_when_their_scope_ends(self):
        # Arrange
        source = (
            "int main (void)\n{\n"
            "  for (int k = 0; k < 5; k++)\n"
            "    {\n"
            "      float tmp[4];\n"
            "      tmp[0] = k;\n"
            "    }\n"
            "  return 0;\n}\n"
        )

        # Act
        result = simulate(build_program(source, file="loop.tc"))

        # Assert
        assert result.ok
        events = [(e.action, e.var, e.pinned) for e in result.trace.memory]
        assert events == [("alloc", "tmp", False), ("free", "tmp", False)] * 5
        assert result.live_allocations == 0

    def test_step_limit_applies_to_each_kernel_run_only(self):
        # Arrange
        program = build_program(STEP_LIMIT_SOURCE, file="s.tc")
        policy = make_policy("eager")

        # Act
        result = Simulator(
            program, make_machine(), uniform_perf(program), policy, max_steps=100
        ).run()

        # Assert
        assert result.status == "failed"
        assert result.error.message == "task 't' failed: step limit of 100 exceeded"
        assert result.error.site == "s.tc:15"
        assert [e.task for e in result.trace.tasks] == [0, 1]

    def test_kernels_run_without_a_step_limit_by_default(self):
        result = simulate(build_program(STEP_LIMIT_SOURCE, file="s.tc"))
        assert result.ok
        assert result.image[0].values(CONFIG).tolist() == [502, 0, 0, 0]

    def test_fault_in_the_entry_procedure_names_its_line(self):
        source = (
            "int main (void)\n{\n"
            "  int z = 0;\n"
            "  int x = 1;\n"
            "  x = x / z;\n"
            "  return x;\n}\n"
        )
        result = simulate(build_program(source, file="d.tc"))
        assert result.status == "failed"
        assert str(result.error) == "d.tc:5: error: integer division by zero"
        assert [e.location for e in result.trace.errors] == ["d.tc:5"]

    def test_missing_cost_entry(self):
        perf = PerfModel({("scale_vector", Target.CPU): CostEntry(1e-6)})
        with pytest.raises(ConfigError, match="no cost entry for 'scale_vector/opencl'"):
            check_machine(vector_program(), make_machine(cpus=1, devices=1), perf)

    def test_no_compatible_worker(self):
        program = build_program(corpus_text("unregistered_call.tc"))
        with pytest.raises(ConfigError, match="no worker can execute codelet 'bump'"):
            check_machine(program, make_machine(cpus=0, devices=1), uniform_perf(program))


MACHINES = st.builds(
    make_machine,
    cpus=st.integers(1, 3),
    devices=st.integers(0, 2),
    latency=st.floats(0.0, 1e-3),
    bandwidth=st.floats(1e6, 1e10),
)
COST = st.floats(1e-6, 1e-2)


class TestSequentialConsistency:
    """Final data never depends on the machine or the policy."""

    @settings(max_examples=40, deadline=None)
    @given(MACHINES, st.sampled_from(["eager", "heft"]), st.lists(COST, min_size=8, max_size=8))
    def test_diamond(self, machine, policy, costs):
        perf = make_perf(dict(zip(sorted(DIAMOND_COSTS, key=str), costs)))
        result = simulate(diamond_program(), machine, perf, policy)
        assert result.ok
        assert image_values(result) == DIAMOND_IMAGE
        assert result.trace.violations() == []

    @settings(max_examples=40, deadline=None)
    @given(MACHINES, st.sampled_from(["eager", "heft"]), COST, COST)
    def test_vector_scale(self, machine, policy, cpu_cost, device_cost):
        perf = make_perf({
            ("scale_vector", Target.CPU): cpu_cost,
            ("scale_vector", Target.OPENCL): device_cost,
        })
        result = simulate(vector_program(), machine, perf, policy)
        assert result.ok
        assert np.array_equal(result.image[0].values(CONFIG), SCALED)
        assert result.live_handles == 0


TASK_ARITY = {"t_r": 1, "t_w": 1, "t_rw": 1, "t_r_w": 2, "t_r_rw": 2, "t_r_r_rw": 3}
RANDOM_MACHINES = [(1, 0), (2, 0), (1, 2)]


@st.composite
def task_programs(draw):
    """Up to 4 registered arrays and up to 10 calls with random waits and acquires."""
    handle_count = draw(st.integers(1, 4))
    names = sorted(n for n, arity in TASK_ARITY.items() if arity <= handle_count)
    steps = []
    for _ in range(draw(st.integers(1, 10))):
        name = draw(st.sampled_from(names))
        handles = draw(st.permutations(range(handle_count)))[:TASK_ARITY[name]]
        steps.append(("call", name, draw(st.integers(-5, 5)), tuple(handles)))
        sync = draw(st.sampled_from(["none", "none", "wait", "acquire"]))
        if sync == "wait":
            steps.append(("wait",))
        elif sync == "acquire":
            steps.append(("acquire", draw(st.integers(0, handle_count - 1))))
    return handle_count, steps


def render_program(handle_count: int, steps) -> str:
    lines = [corpus_text("random_tasks.tc"), "int", "main (void)", "{"]
    for h in range(handle_count):
        lines.append(f"  int h{h}[4] __attribute__ ((registered, heap_allocated));")
    for h in range(handle_count):
        lines.append("  for (int i = 0; i < 4; i++)")
        lines.append(f"    h{h}[i] = i + {1 + 10 * h};")
    for step in steps:
        if step[0] == "call":
            _, name, c, handles = step
            args = ", ".join(f"h{h}" for h in handles)
            lines.append(f"  {name} (4, {c}, {args});")
        elif step[0] == "wait":
            lines.append("#pragma starpu wait")
        else:
            lines.append(f"#pragma starpu acquire h{step[1]}")
    lines += ["  return 0;", "}", ""]
    return "\n".join(lines)


def sequential_image(handle_count: int, steps) -> dict:
    """Final arrays when every call runs to completion in program order."""
    values = [np.arange(4, dtype=np.int32) + 1 + 10 * h for h in range(handle_count)]
    for step in steps:
        if step[0] != "call":
            continue
        _, name, c, handles = step
        arrays = [values[h] for h in handles]
        if name == "t_w":
            values[handles[0]] = np.arange(4, dtype=np.int32) + c
        elif name == "t_rw":
            values[handles[0]] = arrays[0] * 2 + c
        elif name == "t_r_w":
            values[handles[1]] = arrays[0] + c
        elif name == "t_r_rw":
            values[handles[1]] = arrays[1] * 3 + arrays[0] + c
        elif name == "t_r_r_rw":
            values[handles[2]] = arrays[2] + arrays[0] - arrays[1] + c
    return {h: v.tolist() for h, v in enumerate(values)}


class TestRandomPrograms:
    """Generated task programs agree with running their calls in program order."""

    @settings(max_examples=200, deadline=None)
    @given(task_programs(), st.lists(COST, min_size=12, max_size=12))
    def test_every_machine_and_policy_matches_sequential_execution(self, generated, costs):
        # Arrange
        handle_count, steps = generated
        program = build_program(
            render_program(handle_count, steps),
            {"random_tasks.cl": corpus_text("random_tasks.cl")},
            file="random.tc",
        )
        keys = itertools.product(sorted(TASK_ARITY), (Target.CPU, Target.OPENCL))
        perf = make_perf(dict(zip(keys, costs)))
        expected = sequential_image(handle_count, steps)

        # Act & Assert
        for (cpus, devices), policy in itertools.product(RANDOM_MACHINES, ("eager", "heft")):
            result = simulate(program, make_machine(cpus=cpus, devices=devices), perf, policy)
            assert result.ok, result.error
            assert image_values(result) == expected
            assert result.trace.violations() == []
            assert result.live_handles == 0
            assert result.live_allocations == 0
