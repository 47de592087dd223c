# tests/application/test_evaluator.py
"""Tests for the kernel IR interpreter."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.application.evaluator import Evaluator, coerce, evaluate_kernel, wrap_int
from src.application.lexer import Dialect
from src.application.lowering import lower_kernel_body
from src.application.parser import parse_source
from src.domain.exceptions import KernelFault
from src.domain.program import Malloc
from src.domain.value_objects import BaseType, TargetConfig
from tests.conftest import corpus_text

CONFIG = TargetConfig()


def lower(source: str, name: str = "k", dialect: Dialect = Dialect.TASKC, device: bool = False):
    fn = parse_source(source, "k.tc", dialect).function(name)
    return lower_kernel_body(fn, CONFIG, device=device)


def run_k(source: str, buffers: dict, scalars: dict = None) -> None:
    evaluate_kernel(lower(source), buffers, scalars or {}, CONFIG)


class TestConversions:
    """Tests for wrap_int() and coerce()."""

    @pytest.mark.parametrize(
        "value, ctype, expected",
        [
            (2 ** 31, BaseType.INT, -(2 ** 31)),
            (-1, BaseType.UINT, 2 ** 32 - 1),
            (300, BaseType.UCHAR, 44),
            (2 ** 63, BaseType.LONG, -(2 ** 63)),
            (-1, BaseType.SIZE_T, 2 ** 64 - 1),
        ],
    )
    def test_wrap_int(self, value, ctype, expected):
        assert wrap_int(value, ctype, CONFIG) == expected

    def test_long_wraps_at_32_bits_on_narrow_targets(self):
        assert wrap_int(2 ** 31, BaseType.LONG, TargetConfig.for_bits(32)) == -(2 ** 31)

    def test_float_to_int_truncates_toward_zero(self):
        assert coerce(3.9, BaseType.INT, CONFIG) == 3
        assert coerce(-3.9, BaseType.INT, CONFIG) == -3

    def test_non_finite_float_cannot_become_an_int(self):
        with pytest.raises(KernelFault, match="cannot convert inf to int"):
            coerce(math.inf, BaseType.INT, CONFIG)

    def test_float_values_are_single_precision(self):
        value = coerce(3.14, BaseType.FLOAT, CONFIG)
        assert isinstance(value, np.float32)
        assert value == np.float32(3.14)


class TestEvaluateKernel:
    """Tests for evaluate_kernel()."""

    def test_scale_loop_matches_single_precision_arithmetic(self):
        # Arrange
        unit = parse_source(corpus_text("vector_scale.tc"))
        ir = lower_kernel_body(unit.function("scale_vector_cpu"), CONFIG)
        vector = np.arange(1, 9, dtype=np.float32)

        # Act
        evaluate_kernel(ir, {"vector": vector}, {"size": 8, "factor": 3.14}, CONFIG)

        # Assert
        expected = np.arange(1, 9, dtype=np.float32) * np.float32(3.14)
        assert np.array_equal(vector, expected)

    def test_device_kernel_runs_once_per_global_id(self):
        # Arrange
        ir = lower(corpus_text("vector_scale.cl"), "vector_mult_opencl",
                   Dialect.OPENCL, device=True)
        vector = np.ones(10, dtype=np.float32)

        # Act
        evaluate_kernel(ir, {"vector": vector}, {"size": 10, "factor": 2.0}, CONFIG,
                        group_size=8)

        # Assert
        assert np.array_equal(vector, np.full(10, 2.0, dtype=np.float32))

    def test_device_kernel_guard_limits_the_updated_range(self):
        ir = lower(corpus_text("vector_scale.cl"), "vector_mult_opencl",
                   Dialect.OPENCL, device=True)
        vector = np.ones(4, dtype=np.float32)
        evaluate_kernel(ir, {"vector": vector}, {"size": 2, "factor": 5.0}, CONFIG)
        assert vector.tolist() == [5.0, 5.0, 1.0, 1.0]

    def test_integer_division_truncates(self):
        out = np.zeros(2, dtype=np.int32)
        run_k("void k (int *out, int a, int b) { out[0] = a / b; out[1] = a % b; }",
              {"out": out}, {"a": -7, "b": 2})
        assert out.tolist() == [-3, -1]

    def test_division_by_zero_faults(self):
        out = np.zeros(1, dtype=np.int32)
        with pytest.raises(KernelFault, match="integer division by zero"):
            run_k("void k (int *out, int a) { out[0] = a / 0; }", {"out": out}, {"a": 1})

    def test_short_arithmetic_is_promoted_then_narrowed(self):
        out = np.zeros(1, dtype=np.int16)
        run_k("void k (short *out, short a) { out[0] = a + 1; }", {"out": out}, {"a": 32767})
        assert out[0] == -32768

    def test_unsigned_subtraction_wraps(self):
        out = np.zeros(1, dtype=np.uint32)
        run_k("void k (unsigned *out, unsigned a) { out[0] = a - 1; }", {"out": out}, {"a": 0})
        assert out[0] == 2 ** 32 - 1

    def test_multi_dimensional_subscripts_are_row_major(self):
        matrix = np.zeros(2 * 3 * 4, dtype=np.int32)
        run_k("void k (int m[2][3][4]) { m[1][2][3] = 42; }", {"m": matrix})
        assert matrix[1 * 12 + 2 * 4 + 3] == 42
        assert matrix.sum() == 42

    def test_out_of_bounds_store_faults(self):
        out = np.zeros(2, dtype=np.int32)
        with pytest.raises(KernelFault, match="index 5 out of bounds for 'out' of 2 elements"):
            run_k("void k (int *out) { out[5] = 1; }", {"out": out})

    def test_step_limit_stops_runaway_loops(self):
        ir = lower("void k (int n) { while (1) n = n; }")
        evaluator = Evaluator(CONFIG, {"n": 0}, max_steps=100)
        with pytest.raises(KernelFault, match="step limit of 100 exceeded"):
            evaluator.run(ir.body)

    def test_step_limit_counts_each_work_item_separately(self):
        # Arrange
        ir = lower(
            "__kernel void k (__global int *out, int n)\n"
            "{ int i; for (i = 0; i < n; i++) out[get_global_id (0)] += 1; }",
            dialect=Dialect.OPENCL,
            device=True,
        )
        out = np.zeros(16, dtype=np.int32)

        # Act
        evaluate_kernel(ir, {"out": out}, {"n": 3}, CONFIG, max_steps=200)

        # Assert
        assert out.tolist() == [3] * 16
        with pytest.raises(KernelFault, match="step limit of 200 exceeded"):
            evaluate_kernel(ir, {"out": out}, {"n": 100}, CONFIG, max_steps=200)

    def test_host_ops_are_rejected_inside_kernels(self):
        with pytest.raises(KernelFault, match="host memory is not available"):
            Evaluator(CONFIG, {"%1": 4}).run((Malloc("%2", "%1"),))


INT32 = st.integers(-(2 ** 31), 2 ** 31 - 1)
LEAVES = st.one_of(st.sampled_from(["a", "b", "i"]), st.integers(0, 1000))
EXPRESSIONS = st.recursive(
    LEAVES,
    lambda children: st.tuples(st.sampled_from(["+", "-", "*"]), children, children),
    max_leaves=8,
)


def render(tree) -> str:
    if isinstance(tree, tuple):
        op, left, right = tree
        return f"({render(left)} {op} {render(right)})"
    return str(tree)


def exact(tree, env: dict) -> int:
    if isinstance(tree, tuple):
        op, left, right = tree
        lhs, rhs = exact(left, env), exact(right, env)
        return lhs + rhs if op == "+" else lhs - rhs if op == "-" else lhs * rhs
    return env[tree] if isinstance(tree, str) else tree


class TestIrMatchesSourceSemantics:
    """Lowered IR computes what the C statements say, for random bodies."""

    @settings(max_examples=500, deadline=None)
    @given(EXPRESSIONS, EXPRESSIONS, INT32, INT32, st.integers(0, 4))
    def test_loop_with_branch(self, then_expr, else_expr, a, b, n):
        # Arrange
        source = (
            "void k (int *out, int a, int b, int n)\n{\n"
            "  out[0] = 0;\n"
            "  for (int i = 0; i < n; i++)\n"
            f"    if (a < b) out[0] += {render(then_expr)};\n"
            f"    else out[0] -= {render(else_expr)};\n"
            "}\n"
        )
        out = np.full(1, 7, dtype=np.int32)

        # Act
        run_k(source, {"out": out}, {"a": a, "b": b, "n": n})

        # Assert
        total = 0
        for i in range(n):
            env = {"a": a, "b": b, "i": i}
            total += exact(then_expr, env) if a < b else -exact(else_expr, env)
        assert int(out[0]) == wrap_int(total, BaseType.INT, CONFIG)
