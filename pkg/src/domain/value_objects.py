# src/domain/value_objects.py
"""Value objects shared by the compiler and the simulator."""

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Optional, Tuple, Union

if TYPE_CHECKING:
    from typing import Self

import numpy as np


@dataclass(frozen=True)
class SourceLocation:
    """Position of a construct in a source file."""
    file: str
    line: int = 1
    column: int = 1

    def __post_init__(self) -> None:
        if self.line < 1:
            raise ValueError("Line must be at least 1")
        if self.column < 1:
            raise ValueError("Column must be at least 1")

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.column}"

    @property
    def site(self) -> str:
        """Short `file:line` form used by runtime error events."""
        return f"{self.file}:{self.line}"

    def shifted(self, columns: int) -> "Self":
        """Location `columns` characters further on the same line."""
        return SourceLocation(self.file, self.line, self.column + columns)


NO_LOCATION = SourceLocation("<unknown>")


@dataclass(frozen=True)
class TargetConfig:
    """Data model of the compilation target."""
    pointer_width_bits: int = 64
    long_width_bits: int = 64
    char_signed: bool = True

    def __post_init__(self) -> None:
        if self.pointer_width_bits not in (32, 64):
            raise ValueError("Pointer width must be 32 or 64 bits")
        if self.long_width_bits not in (32, 64):
            raise ValueError("Long width must be 32 or 64 bits")

    @classmethod
    def for_bits(cls, bits: int, char_signed: bool = True) -> "Self":
        """Config where pointers and `long` share the given width."""
        return cls(pointer_width_bits=bits, long_width_bits=bits, char_signed=char_signed)


class BaseType(Enum):
    """Scalar base types of TaskC."""
    VOID = "void"
    CHAR = "char"
    SCHAR = "signed char"
    UCHAR = "unsigned char"
    SHORT = "short"
    USHORT = "unsigned short"
    INT = "int"
    UINT = "unsigned int"
    LONG = "long"
    ULONG = "unsigned long"
    FLOAT = "float"
    DOUBLE = "double"
    SIZE_T = "size_t"

    @property
    def is_floating(self) -> bool:
        return self in (BaseType.FLOAT, BaseType.DOUBLE)

    @property
    def is_integer(self) -> bool:
        return self is not BaseType.VOID and not self.is_floating

    @property
    def rank(self) -> int:
        """Integer conversion rank."""
        return _RANKS[self]

    @property
    def gcc_name(self) -> str:
        """Spelling GCC uses for the type in diagnostics."""
        return _GCC_NAMES.get(self, self.value)

    def size(self, config: TargetConfig) -> int:
        """Width in bytes under the given target."""
        if self is BaseType.LONG or self is BaseType.ULONG:
            return config.long_width_bits // 8
        if self is BaseType.SIZE_T:
            return config.pointer_width_bits // 8
        if self is BaseType.VOID:
            raise ValueError("void has no size")
        return _FIXED_SIZES[self]

    def is_signed(self, config: TargetConfig) -> bool:
        if self is BaseType.CHAR:
            return config.char_signed
        return self in (
            BaseType.SCHAR, BaseType.SHORT, BaseType.INT, BaseType.LONG,
            BaseType.FLOAT, BaseType.DOUBLE,
        )

    def dtype(self, config: TargetConfig) -> np.dtype:
        """Little-endian numpy dtype holding values of this type."""
        if self is BaseType.FLOAT:
            return np.dtype("<f4")
        if self is BaseType.DOUBLE:
            return np.dtype("<f8")
        kind = "i" if self.is_signed(config) else "u"
        return np.dtype(f"<{kind}{self.size(config)}")

    def to_unsigned(self) -> "BaseType":
        return _UNSIGNED.get(self, self)

    def promoted(self) -> "BaseType":
        """Result of the integer promotions."""
        if self.is_integer and self.rank < BaseType.INT.rank:
            return BaseType.INT
        return self


_FIXED_SIZES = {
    BaseType.CHAR: 1,
    BaseType.SCHAR: 1,
    BaseType.UCHAR: 1,
    BaseType.SHORT: 2,
    BaseType.USHORT: 2,
    BaseType.INT: 4,
    BaseType.UINT: 4,
    BaseType.FLOAT: 4,
    BaseType.DOUBLE: 8,
}

_RANKS = {
    BaseType.VOID: 0,
    BaseType.CHAR: 1,
    BaseType.SCHAR: 1,
    BaseType.UCHAR: 1,
    BaseType.SHORT: 2,
    BaseType.USHORT: 2,
    BaseType.INT: 3,
    BaseType.UINT: 3,
    BaseType.LONG: 4,
    BaseType.ULONG: 4,
    BaseType.SIZE_T: 4,
    BaseType.FLOAT: 5,
    BaseType.DOUBLE: 6,
}

_GCC_NAMES = {
    BaseType.SHORT: "short int",
    BaseType.USHORT: "short unsigned int",
    BaseType.LONG: "long int",
    BaseType.ULONG: "long unsigned int",
}

_UNSIGNED = {
    BaseType.CHAR: BaseType.UCHAR,
    BaseType.SCHAR: BaseType.UCHAR,
    BaseType.SHORT: BaseType.USHORT,
    BaseType.INT: BaseType.UINT,
    BaseType.LONG: BaseType.ULONG,
}


def common_type(left: BaseType, right: BaseType, config: TargetConfig) -> BaseType:
    """Usual arithmetic conversions of C."""
    if BaseType.DOUBLE in (left, right):
        return BaseType.DOUBLE
    if BaseType.FLOAT in (left, right):
        return BaseType.FLOAT
    left, right = left.promoted(), right.promoted()
    if left is right:
        return left
    left_signed, right_signed = left.is_signed(config), right.is_signed(config)
    if left_signed == right_signed:
        return left if left.rank >= right.rank else right
    unsigned, signed = (right, left) if left_signed else (left, right)
    if unsigned.rank >= signed.rank:
        return unsigned
    if signed.size(config) > unsigned.size(config):
        return signed
    return signed.to_unsigned()


ArrayDim = Union[int, str, None]


@dataclass(frozen=True)
class TypeExpr:
    """C type of a declaration: base, pointers, array dimensions, const."""
    base: BaseType
    pointer_depth: int = 0
    array_dims: Tuple[ArrayDim, ...] = ()
    const_qualified: bool = False
    address_space: Optional[str] = None

    def __post_init__(self) -> None:
        if self.pointer_depth < 0:
            raise ValueError("Pointer depth cannot be negative")
        # Decayed array parameters keep their inner extents behind one pointer.
        if self.array_dims and self.pointer_depth > 1:
            raise ValueError("Arrays of pointers are not supported")
        for dim in self.array_dims:
            if isinstance(dim, int) and dim < 1:
                raise ValueError("Array dimensions must be positive")

    @property
    def is_buffer(self) -> bool:
        """Pointer or array type, passed to tasks as a data handle."""
        return self.pointer_depth > 0 or bool(self.array_dims)

    @property
    def is_scalar(self) -> bool:
        return not self.is_buffer and self.base is not BaseType.VOID

    @property
    def is_void(self) -> bool:
        return self.base is BaseType.VOID and not self.is_buffer

    @property
    def element_type(self) -> "TypeExpr":
        """Type of one element of a buffer (scalar types are their own element)."""
        return TypeExpr(self.base, const_qualified=self.const_qualified)

    @property
    def static_count(self) -> Optional[int]:
        """Number of elements of a constant-size array, if known."""
        if not self.array_dims or not all(isinstance(d, int) for d in self.array_dims):
            return None
        count = 1
        for dim in self.array_dims:
            count *= dim
        return count

    def normalized(self) -> "TypeExpr":
        """Form used for signature matching: outermost array decays to pointer."""
        if self.array_dims:
            inner = tuple(d if isinstance(d, int) else None for d in self.array_dims[1:])
            return TypeExpr(self.base, 1, inner, self.const_qualified)
        return TypeExpr(self.base, self.pointer_depth, (), self.const_qualified)

    def size(self, config: TargetConfig) -> int:
        """Size in bytes of a value of this type (pointers included)."""
        if self.pointer_depth:
            return config.pointer_width_bits // 8
        count = self.static_count if self.array_dims else 1
        if count is None:
            raise ValueError(f"Type '{self}' has no static size")
        return count * self.base.size(config)

    def __str__(self) -> str:
        text = f"{'const ' if self.const_qualified else ''}{self.base.value}"
        if self.pointer_depth:
            text += " " + "*" * self.pointer_depth
        for dim in self.array_dims:
            text += f"[{'' if dim is None else dim}]"
        return text


class AccessMode(Enum):
    """How a task parameter is accessed."""
    R = "R"
    W = "W"
    RW = "RW"
    SCALAR = "ScalarValue"

    @property
    def reads(self) -> bool:
        return self in (AccessMode.R, AccessMode.RW)

    @property
    def writes(self) -> bool:
        return self in (AccessMode.W, AccessMode.RW)

    def merged(self, other: "AccessMode") -> "AccessMode":
        """Mode of a handle passed twice to the same task."""
        if self is other:
            return self
        return AccessMode.RW


class Target(Enum):
    """Implementation targets, also used as worker architectures."""
    CPU = "cpu"
    OPENCL = "opencl"
    CUDA = "cuda"

    @property
    def is_device(self) -> bool:
        return self is not Target.CPU

    @classmethod
    def parse(cls, text: str) -> "Optional[Self]":
        for target in cls:
            if target.value == text:
                return target
        return None


class Severity(Enum):
    """Diagnostic severity."""
    ERROR = "error"
    WARNING = "warning"


@dataclass(frozen=True)
class Diagnostic:
    """Compiler message attached to a source location."""
    severity: Severity
    location: SourceLocation
    message: str
    code: str

    @classmethod
    def error(cls, location: SourceLocation, message: str, code: str) -> "Self":
        return cls(Severity.ERROR, location, message, code)

    @classmethod
    def warning(cls, location: SourceLocation, message: str, code: str) -> "Self":
        return cls(Severity.WARNING, location, message, code)

    @property
    def is_error(self) -> bool:
        return self.severity is Severity.ERROR

    @property
    def sort_key(self) -> tuple:
        return (
            self.location.file,
            self.location.line,
            self.location.column,
            self.code,
            self.message,
        )

    def __str__(self) -> str:
        return f"{self.location}: {self.severity.value}: {self.message}"


def sort_diagnostics(diagnostics: list[Diagnostic]) -> list[Diagnostic]:
    """Order by location, dropping exact duplicates."""
    return sorted(set(diagnostics), key=lambda d: d.sort_key)


class CoherenceState(Enum):
    """Per-node state of a data handle copy."""
    OWNER = "owner"
    SHARED = "shared"
    INVALID = "invalid"
