# tests/domain/test_entities.py
"""Tests for domain entities."""

import numpy as np
import pytest

from src.domain.entities import (
    Allocation,
    CodeletDescriptor,
    DataHandle,
    HandleArg,
    HandleSnapshot,
    KernelBinding,
    TaskDecl,
    TaskInstance,
    TaskParam,
    TaskState,
)
from src.domain.exceptions import InvariantViolation, UseAfterUnregisterError
from src.domain.value_objects import (
    AccessMode,
    BaseType,
    CoherenceState,
    SourceLocation,
    TargetConfig,
    TypeExpr,
)

HERE = SourceLocation("t.tc", 1, 1)


def make_handle(nx: int = 4, pinned: bool = False) -> DataHandle:
    host = np.arange(nx * 4, dtype=np.uint8)
    return DataHandle(0, 0x1000, 4, nx, BaseType.INT, "v", pinned, host)


class TestTaskParam:
    """Tests for TaskParam entity."""

    def test_buffer_parameter_needs_buffer_mode(self):
        with pytest.raises(ValueError, match="needs a buffer access mode"):
            TaskParam("x", TypeExpr(BaseType.FLOAT, 1), AccessMode.SCALAR, HERE)

    def test_scalar_parameter_is_passed_by_value(self):
        with pytest.raises(ValueError, match="must be passed by value"):
            TaskParam("n", TypeExpr(BaseType.INT), AccessMode.R, HERE)


class TestTaskDecl:
    """Tests for TaskDecl entity."""

    def setup_method(self):
        self.task = TaskDecl("scale", [
            TaskParam("n", TypeExpr(BaseType.UINT), AccessMode.SCALAR, HERE),
            TaskParam("v", TypeExpr(BaseType.FLOAT, 1), AccessMode.RW, HERE),
            TaskParam("f", TypeExpr(BaseType.FLOAT), AccessMode.SCALAR, HERE),
        ], HERE)

    def test_partitions_buffer_and_scalar_params(self):
        assert [p.name for p in self.task.buffer_params] == ["v"]
        assert [p.name for p in self.task.scalar_params] == ["n", "f"]
        assert self.task.nbuffers == 1

    def test_codelet_carries_one_mode_per_buffer(self):
        codelet = CodeletDescriptor.for_task(self.task, [])
        assert codelet.modes == [AccessMode.RW]
        assert codelet.targets == []

    def test_take_body_without_body_raises_error(self):
        with pytest.raises(ValueError, match="has no body"):
            self.task.take_body()


class TestKernelBinding:
    """Tests for KernelBinding entity."""

    def test_group_size_must_be_positive(self):
        with pytest.raises(ValueError, match="Group size must be at least 1"):
            KernelBinding("k.cl", "kern", 0, HERE)


class TestAllocation:
    """Tests for Allocation entity."""

    def test_view_writes_through(self):
        allocation = Allocation(0x1000, 8, False, "p", np.zeros(8, dtype=np.uint8))
        allocation.view(0x1004, 4)[:] = 7
        assert list(allocation.data) == [0, 0, 0, 0, 7, 7, 7, 7]
        assert allocation.contains(0x1004, 4)
        assert not allocation.contains(0x1005, 4)

    def test_double_free_raises_error(self):
        allocation = Allocation(0x1000, 8, False, "p", np.zeros(8, dtype=np.uint8))
        allocation.free()
        with pytest.raises(ValueError, match="freed twice"):
            allocation.free()


class TestDataHandleCoherence:
    """Tests for the per-node states of a DataHandle."""

    def test_fresh_handle_is_owned_by_main_memory(self):
        handle = make_handle()
        assert handle.states == {0: CoherenceState.OWNER}
        assert handle.source_for(0) is None
        assert handle.source_for(1) == 0

    def test_fetch_shares_the_data(self):
        handle = make_handle()
        assert handle.fetch(1) == 0
        assert handle.state_on(0) is CoherenceState.SHARED
        assert handle.state_on(1) is CoherenceState.SHARED
        assert np.array_equal(handle.view_on(1), handle.host_copy)
        handle.check_coherence()

    def test_write_invalidates_other_copies(self):
        # Arrange
        handle = make_handle()
        handle.fetch(1)

        # Act
        handle.view_on(1)[:] = 0
        handle.write(1)

        # Assert
        assert handle.state_on(1) is CoherenceState.OWNER
        assert handle.state_on(0) is CoherenceState.INVALID
        assert handle.source_for(0) == 1
        handle.check_coherence()

    def test_fetch_back_to_host_restores_data(self):
        handle = make_handle()
        handle.fetch(1)
        handle.view_on(1)[:] = 9
        handle.write(1)
        handle.fetch(0)
        assert set(handle.host_copy) == {9}

    def test_diverging_shared_copies_violate_coherence(self):
        handle = make_handle()
        handle.fetch(1)
        handle.view_on(1)[0] = 200
        with pytest.raises(InvariantViolation, match="differ"):
            handle.check_coherence()

    def test_unregister_requires_a_valid_host_copy(self):
        handle = make_handle()
        handle.fetch(1)
        handle.write(1)
        with pytest.raises(InvariantViolation, match="without host copy"):
            handle.unregister()

    def test_unregistered_handle_rejects_use(self):
        handle = make_handle()
        handle.fetch(2)
        handle.unregister()
        assert not handle.live
        assert handle.states == {0: CoherenceState.SHARED}
        with pytest.raises(UseAfterUnregisterError):
            handle.fetch(1)

    def test_overlap(self):
        handle = make_handle(nx=4)
        assert handle.overlaps(0x100C, 4)
        assert not handle.overlaps(0x1010, 4)


class TestTaskInstance:
    """Tests for the TaskInstance lifecycle."""

    def test_dependencies_must_be_earlier(self):
        with pytest.raises(ValueError, match="earlier submissions"):
            TaskInstance(1, "c", b"", [], "t.tc:1", {1})

    def test_lifecycle(self):
        task = TaskInstance(0, "c", b"", [HandleArg(0, AccessMode.R)], "t.tc:1")
        task.mark_ready()
        task.start(2)
        task.complete()
        assert task.state is TaskState.DONE
        assert task.worker == 2
        assert task.is_finished

    def test_cannot_start_while_blocked(self):
        task = TaskInstance(0, "c", b"", [], "t.tc:1")
        with pytest.raises(ValueError, match="cannot start from blocked"):
            task.start(0)

    def test_failure_records_the_reason(self):
        task = TaskInstance(3, "c", b"", [], "t.tc:1", {1})
        task.fail("dependency 1 failed")
        assert task.state is TaskState.FAILED
        assert task.error == "dependency 1 failed"


class TestHandleSnapshot:
    """Tests for HandleSnapshot."""

    def test_values_decode_with_target_dtype(self):
        data = np.array([1.5, -2.0], dtype="<f4").tobytes()
        snapshot = HandleSnapshot(0, "v", BaseType.FLOAT, data)
        assert list(snapshot.values(TargetConfig())) == [1.5, -2.0]
