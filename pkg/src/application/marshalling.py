# src/application/marshalling.py
"""Packed little-endian layout of task scalar arguments."""

import struct
from typing import Dict, Sequence

from src.domain.program import ScalarSlot
from src.domain.value_objects import BaseType, TargetConfig

_INT_CODES = {1: "b", 2: "h", 4: "i", 8: "q"}


def struct_code(slot: ScalarSlot, config: TargetConfig) -> str:
    """`struct` format character of one packed scalar."""
    if slot.ctype is BaseType.FLOAT:
        return "f"
    if slot.ctype is BaseType.DOUBLE:
        return "d"
    code = _INT_CODES[slot.width]
    return code if slot.ctype.is_signed(config) else code.upper()


def pack_format(slots: Sequence[ScalarSlot], config: TargetConfig) -> str:
    return "<" + "".join(struct_code(s, config) for s in slots)


def pack_scalars(slots: Sequence[ScalarSlot], values: Sequence, config: TargetConfig) -> bytes:
    """Concatenate scalars in slot order; no padding."""
    if len(values) != len(slots):
        raise ValueError(f"Expected {len(slots)} scalar values, got {len(values)}")
    plain = [
        float(v) if s.ctype.is_floating else int(v) for s, v in zip(slots, values)
    ]
    try:
        return struct.pack(pack_format(slots, config), *plain)
    except struct.error as e:
        raise ValueError(f"Cannot pack scalar arguments: {e}") from e


def unpack_scalars(
    slots: Sequence[ScalarSlot], data: bytes, config: TargetConfig
) -> Dict[str, object]:
    """Inverse of `pack_scalars`, yielding values typed as their C type."""
    fmt = pack_format(slots, config)
    expected = struct.calcsize(fmt)
    if expected != len(data):
        raise ValueError(f"Scalar pack holds {len(data)} bytes, layout needs {expected}")
    values = struct.unpack(fmt, data)
    result = {}
    for slot, value in zip(slots, values):
        if slot.ctype.is_floating:
            value = slot.ctype.dtype(config).type(value)
        result[slot.param] = value
    return result
