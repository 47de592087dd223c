# src/application/evaluator.py
"""Interpreter for kernel IR with C integer and IEEE float semantics."""

import math
import operator
from typing import Dict, Mapping, MutableMapping, Optional, Tuple

import numpy as np

from src.application.services import HostMemory
from src.domain.exceptions import KernelFault
from src.domain.program import (
    BinaryOp,
    Branch,
    CompareOp,
    Const,
    Convert,
    Free,
    GlobalId,
    KernelIR,
    LoadElem,
    Loop,
    Malloc,
    Move,
    Op,
    ReturnOp,
    StoreElem,
    UnaryOp,
)
from src.domain.value_objects import BaseType, TargetConfig

_COMPARE = {
    "==": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    ">": operator.gt,
    "<=": operator.le,
    ">=": operator.ge,
}
_FLOAT_OPS = {
    "+": operator.add,
    "-": operator.sub,
    "*": operator.mul,
    "/": operator.truediv,
}


def wrap_int(value: int, ctype: BaseType, config: TargetConfig) -> int:
    """Reduce an integer modulo 2**bits of `ctype`."""
    bits = ctype.size(config) * 8
    value &= (1 << bits) - 1
    if ctype.is_signed(config) and value >= 1 << (bits - 1):
        value -= 1 << bits
    return value


def coerce(value, ctype: BaseType, config: TargetConfig):
    """C conversion of a register value to `ctype`."""
    if ctype.is_floating:
        with np.errstate(all="ignore"):
            return ctype.dtype(config).type(value)
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise KernelFault(f"cannot convert {value} to {ctype.value}")
        value = math.trunc(value)
    return wrap_int(int(value), ctype, config)


def truthy(value) -> bool:
    return bool(value != 0)


def _int_divide(lhs: int, rhs: int, op: str) -> int:
    if rhs == 0:
        raise KernelFault("integer division by zero")
    quotient = abs(lhs) // abs(rhs)
    if (lhs < 0) != (rhs < 0):
        quotient = -quotient
    return quotient if op == "/" else lhs - rhs * quotient


class Evaluator:
    """Executes IR ops over a register file.

    Buffers are either numpy arrays (task arguments) or integer addresses
    resolved through `memory` (entry procedure).
    """

    def __init__(
        self,
        config: TargetConfig,
        registers: Optional[MutableMapping[str, object]] = None,
        memory: Optional[HostMemory] = None,
        global_id: int = 0,
        max_steps: Optional[int] = None,
    ):
        self._config = config
        self.registers = registers if registers is not None else {}
        self._memory = memory
        self._global_id = global_id
        self._steps = 0
        self._max_steps = max_steps

    def run(self, ops: Tuple[Op, ...]) -> bool:
        """Execute `ops`; True when a return op was reached."""
        regs = self.registers
        for position, op in enumerate(ops):
            if self._max_steps is not None:
                self._steps += 1
                if self._steps > self._max_steps:
                    raise KernelFault(f"step limit of {self._max_steps} exceeded")
            if isinstance(op, Const):
                regs[op.dst] = coerce(op.value, op.ctype, self._config)
            elif isinstance(op, Move):
                regs[op.dst] = regs[op.src]
            elif isinstance(op, Convert):
                regs[op.dst] = coerce(regs[op.src], op.ctype, self._config)
            elif isinstance(op, BinaryOp):
                regs[op.dst] = self._binary(op, regs[op.lhs], regs[op.rhs])
            elif isinstance(op, CompareOp):
                regs[op.dst] = int(bool(_COMPARE[op.op](regs[op.lhs], regs[op.rhs])))
            elif isinstance(op, UnaryOp):
                regs[op.dst] = self._unary(op, regs[op.src])
            elif isinstance(op, LoadElem):
                regs[op.dst] = self._load(op, position)
            elif isinstance(op, StoreElem):
                self._store(op, position)
            elif isinstance(op, GlobalId):
                regs[op.dst] = self._global_id
            elif isinstance(op, Loop):
                while True:
                    if self.run(op.cond):
                        return True
                    if not truthy(regs[op.test]):
                        break
                    if self.run(op.body) or self.run(op.step):
                        return True
            elif isinstance(op, Branch):
                if self.run(op.then if truthy(regs[op.test]) else op.orelse):
                    return True
            elif isinstance(op, ReturnOp):
                return True
            elif isinstance(op, Malloc):
                regs[op.dst] = self._host().malloc(int(regs[op.size]))
            elif isinstance(op, Free):
                self._host().free(int(regs[op.src]))
            else:
                raise KernelFault(f"op '{op.OP}' cannot run inside a kernel (op {position})")
        return False

    def _host(self) -> HostMemory:
        if self._memory is None:
            raise KernelFault("host memory is not available inside a kernel")
        return self._memory

    def _binary(self, op: BinaryOp, lhs, rhs):
        if op.ctype.is_floating:
            with np.errstate(all="ignore"):
                return op.ctype.dtype(self._config).type(_FLOAT_OPS[op.op](lhs, rhs))
        if op.op in ("/", "%"):
            result = _int_divide(lhs, rhs, op.op)
        elif op.op == "+":
            result = lhs + rhs
        elif op.op == "-":
            result = lhs - rhs
        elif op.op == "*":
            result = lhs * rhs
        else:
            raise KernelFault(f"unknown arithmetic operator '{op.op}'")
        return wrap_int(result, op.ctype, self._config)

    def _unary(self, op: UnaryOp, value):
        if op.op != "neg":
            raise KernelFault(f"unknown unary operator '{op.op}'")
        if op.ctype.is_floating:
            return -value
        return wrap_int(-value, op.ctype, self._config)

    def _buffer(self, name: str, index: int, position: int):
        buffer = self.registers[name]
        if isinstance(buffer, np.ndarray) and not 0 <= index < len(buffer):
            raise KernelFault(
                f"index {index} out of bounds for '{name}' of {len(buffer)} elements "
                f"(op {position})"
            )
        return buffer

    def _load(self, op: LoadElem, position: int):
        index = self.registers[op.index]
        buffer = self._buffer(op.buffer, index, position)
        if isinstance(buffer, np.ndarray):
            return coerce(buffer[index], op.ctype, self._config)
        return self._host().load(buffer, index, op.ctype)

    def _store(self, op: StoreElem, position: int) -> None:
        index = self.registers[op.index]
        buffer = self._buffer(op.buffer, index, position)
        value = self.registers[op.src]
        if isinstance(buffer, np.ndarray):
            buffer[index] = value
        else:
            self._host().store(buffer, index, op.ctype, value)


def evaluate_kernel(
    ir: KernelIR,
    buffers: Mapping[str, np.ndarray],
    scalars: Mapping[str, object],
    config: TargetConfig,
    group_size: int = 1,
    max_steps: Optional[int] = None,
) -> None:
    """Run an implementation over typed buffer views, mutating them in place.

    Device kernels run once per global id 0..N-1, N being the element count
    of the first buffer argument, one work group of `group_size` ids at a time.
    `max_steps` bounds the ops of one CPU run or of one work item; None means no bound.
    """
    registers: Dict[str, object] = {}
    for param in ir.params:
        if param.kind == "buffer":
            registers[param.name] = buffers[param.name]
        else:
            registers[param.name] = coerce(scalars[param.name], param.ctype, config)
    if not ir.device:
        Evaluator(config, registers, max_steps=max_steps).run(ir.body)
        return
    buffer_params = ir.buffer_params
    size = len(buffers[buffer_params[0].name]) if buffer_params else 1
    for group_start in range(0, size, group_size):
        for global_id in range(group_start, min(group_start + group_size, size)):
            Evaluator(
                config, dict(registers), global_id=global_id, max_steps=max_steps
            ).run(ir.body)
