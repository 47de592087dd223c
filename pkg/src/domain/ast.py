# src/domain/ast.py
"""Attributed syntax tree of TaskC translation units.

Nodes are immutable. Source locations are excluded from equality so that
two trees compare structurally.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Tuple, Union

from .value_objects import NO_LOCATION, SourceLocation, TypeExpr

KNOWN_ATTRIBUTES = frozenset(
    {"task", "task_implementation", "output", "heap_allocated", "registered"}
)
ATTRIBUTE_ARITY = {
    "task": 0,
    "task_implementation": 2,
    "output": 0,
    "heap_allocated": 0,
    "registered": 0,
}


@dataclass(frozen=True)
class Node:
    location: SourceLocation = field(
        default=NO_LOCATION, compare=False, repr=False, kw_only=True
    )


# Expressions

@dataclass(frozen=True)
class IntLiteral(Node):
    value: int
    text: str = field(default="", compare=False)

    @property
    def spelling(self) -> str:
        return self.text or str(self.value)


@dataclass(frozen=True)
class FloatLiteral(Node):
    value: float
    text: str = field(default="", compare=False)
    single: bool = False

    @property
    def spelling(self) -> str:
        if self.text:
            return self.text
        return repr(self.value) + ("f" if self.single else "")


@dataclass(frozen=True)
class Name(Node):
    ident: str


@dataclass(frozen=True)
class Subscript(Node):
    base: "Expr"
    index: "Expr"


@dataclass(frozen=True)
class Call(Node):
    function: str
    args: Tuple["Expr", ...] = ()


@dataclass(frozen=True)
class Unary(Node):
    op: str
    operand: "Expr"


@dataclass(frozen=True)
class Binary(Node):
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class CastExpr(Node):
    target: TypeExpr
    operand: "Expr"


@dataclass(frozen=True)
class SizeOf(Node):
    operand: Union[TypeExpr, "Expr"]


Expr = Union[IntLiteral, FloatLiteral, Name, Subscript, Call, Unary, Binary, CastExpr, SizeOf]


@dataclass(frozen=True)
class InitList(Node):
    items: Tuple[Expr, ...] = ()


# Annotations

@dataclass(frozen=True)
class Attribute(Node):
    """GNU-style attribute; arguments keep their token spelling."""
    name: str
    args: Tuple[str, ...] = ()

    @property
    def is_known(self) -> bool:
        return self.name in KNOWN_ATTRIBUTES

    def text_arg(self, index: int) -> str:
        """Argument with surrounding quotes of a text literal removed."""
        arg = self.args[index]
        if len(arg) >= 2 and arg.startswith('"') and arg.endswith('"'):
            return arg[1:-1]
        return arg


class PragmaKind(Enum):
    REGISTER = "register"
    UNREGISTER = "unregister"
    ACQUIRE = "acquire"
    WAIT = "wait"
    OPENCL = "opencl"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class PragmaNode(Node):
    """`#pragma` line; unknown pragmas keep their payload text."""
    kind: PragmaKind
    var: Optional[str] = None
    size: Optional[Expr] = None
    impl: Optional[str] = None
    file: Optional[str] = None
    kernel: Optional[str] = None
    group_size: Optional[int] = None
    text: Optional[str] = None

    def __post_init__(self) -> None:
        kind = self.kind
        operands = {
            "var": self.var,
            "size": self.size,
            "impl": self.impl,
            "file": self.file,
            "kernel": self.kernel,
            "group_size": self.group_size,
            "text": self.text,
        }
        required = _PRAGMA_OPERANDS[kind]
        optional = {"size"} if kind is PragmaKind.REGISTER else set()
        for name, value in operands.items():
            if name in required and value is None:
                raise ValueError(f"Pragma '{kind.value}' requires operand '{name}'")
            if name not in required and name not in optional and value is not None:
                raise ValueError(f"Pragma '{kind.value}' takes no operand '{name}'")
        if kind is PragmaKind.OPENCL and self.group_size < 1:
            raise ValueError("OpenCL group size must be at least 1")

    @property
    def is_starpu(self) -> bool:
        """Whether the pragma belongs to the task extensions (known or not)."""
        if self.kind is not PragmaKind.UNKNOWN:
            return True
        words = self.text.split()
        return bool(words) and words[0] == "starpu"


_PRAGMA_OPERANDS = {
    PragmaKind.REGISTER: {"var"},
    PragmaKind.UNREGISTER: {"var"},
    PragmaKind.ACQUIRE: {"var"},
    PragmaKind.WAIT: set(),
    PragmaKind.OPENCL: {"impl", "file", "kernel", "group_size"},
    PragmaKind.UNKNOWN: {"text"},
}


# Declarations

@dataclass(frozen=True)
class Param(Node):
    name: Optional[str]
    type: TypeExpr
    attributes: Tuple[Attribute, ...] = ()

    def has_attribute(self, name: str) -> bool:
        return any(a.name == name for a in self.attributes)


@dataclass(frozen=True)
class VarDecl(Node):
    name: str
    type: TypeExpr
    attributes: Tuple[Attribute, ...] = ()
    init: Optional[Union[Expr, InitList]] = None
    specifiers: Tuple[str, ...] = ()

    def has_attribute(self, name: str) -> bool:
        return any(a.name == name for a in self.attributes)

    @property
    def is_static(self) -> bool:
        return "static" in self.specifiers or "extern" in self.specifiers


# Statements

@dataclass(frozen=True)
class Block(Node):
    items: Tuple["Stmt", ...] = ()


@dataclass(frozen=True)
class ExprStmt(Node):
    expr: Expr


@dataclass(frozen=True)
class Assign(Node):
    target: Expr
    op: str
    value: Expr


@dataclass(frozen=True)
class IncDec(Node):
    target: Expr
    op: str
    prefix: bool = False


@dataclass(frozen=True)
class If(Node):
    condition: Expr
    then: "Stmt"
    otherwise: Optional["Stmt"] = None


@dataclass(frozen=True)
class For(Node):
    init: Optional["Stmt"]
    condition: Optional[Expr]
    step: Optional["Stmt"]
    body: "Stmt"


@dataclass(frozen=True)
class While(Node):
    condition: Expr
    body: "Stmt"


@dataclass(frozen=True)
class Return(Node):
    value: Optional[Expr] = None


@dataclass(frozen=True)
class Empty(Node):
    pass


Stmt = Union[Block, ExprStmt, Assign, IncDec, If, For, While, Return, Empty, VarDecl, PragmaNode]


@dataclass(frozen=True)
class FunctionDecl(Node):
    name: str
    return_type: TypeExpr
    params: Tuple[Param, ...] = ()
    attributes: Tuple[Attribute, ...] = ()
    body: Optional[Block] = None
    specifiers: Tuple[str, ...] = ()

    def has_attribute(self, name: str) -> bool:
        return any(a.name == name for a in self.attributes)

    def attribute(self, name: str) -> Optional[Attribute]:
        for attribute in self.attributes:
            if attribute.name == name:
                return attribute
        return None

    @property
    def is_kernel(self) -> bool:
        return "__kernel" in self.specifiers


TopLevel = Union[FunctionDecl, VarDecl, PragmaNode]


@dataclass(frozen=True)
class TranslationUnit(Node):
    items: Tuple[TopLevel, ...] = ()
    file: str = field(default="<input>", compare=False)

    @property
    def declarations(self) -> Tuple[Union[FunctionDecl, VarDecl], ...]:
        return tuple(i for i in self.items if not isinstance(i, PragmaNode))

    @property
    def pragmas(self) -> Tuple[PragmaNode, ...]:
        """Top-level pragmas and pragmas nested in function bodies, in order."""
        found = []
        for item in self.items:
            if isinstance(item, PragmaNode):
                found.append(item)
            elif isinstance(item, FunctionDecl) and item.body is not None:
                found.extend(s for s in walk_statements(item.body) if isinstance(s, PragmaNode))
        return tuple(found)

    def function(self, name: str) -> Optional[FunctionDecl]:
        """Definition of `name` if present, else its last declaration."""
        found = None
        for item in self.items:
            if isinstance(item, FunctionDecl) and item.name == name:
                if item.body is not None:
                    return item
                found = item
        return found


def child_statements(stmt: Stmt) -> Tuple[Stmt, ...]:
    """Direct sub-statements of a compound statement."""
    if isinstance(stmt, Block):
        return stmt.items
    if isinstance(stmt, If):
        return (stmt.then,) if stmt.otherwise is None else (stmt.then, stmt.otherwise)
    if isinstance(stmt, For):
        parts = [stmt.init] if stmt.init is not None else []
        parts.append(stmt.body)
        if stmt.step is not None:
            parts.append(stmt.step)
        return tuple(parts)
    if isinstance(stmt, While):
        return (stmt.body,)
    return ()


def walk_statements(stmt: Stmt) -> Iterator[Stmt]:
    """Pre-order walk over a statement and everything nested in it."""
    yield stmt
    for child in child_statements(stmt):
        yield from walk_statements(child)


def child_expressions(node: Union[Expr, InitList]) -> Tuple[Expr, ...]:
    if isinstance(node, Subscript):
        return (node.base, node.index)
    if isinstance(node, Call):
        return node.args
    if isinstance(node, (Unary, CastExpr)):
        return (node.operand,)
    if isinstance(node, Binary):
        return (node.left, node.right)
    if isinstance(node, SizeOf) and not isinstance(node.operand, TypeExpr):
        return (node.operand,)
    if isinstance(node, InitList):
        return node.items
    return ()


def walk_expression(expr: Union[Expr, InitList]) -> Iterator[Expr]:
    yield expr
    for child in child_expressions(expr):
        yield from walk_expression(child)


def statement_expressions(stmt: Stmt) -> Tuple[Expr, ...]:
    """Expressions owned directly by a statement (not by its sub-statements)."""
    if isinstance(stmt, ExprStmt):
        return (stmt.expr,)
    if isinstance(stmt, Assign):
        return (stmt.target, stmt.value)
    if isinstance(stmt, IncDec):
        return (stmt.target,)
    if isinstance(stmt, (If, While)):
        return (stmt.condition,)
    if isinstance(stmt, For):
        return () if stmt.condition is None else (stmt.condition,)
    if isinstance(stmt, Return):
        return () if stmt.value is None else (stmt.value,)
    if isinstance(stmt, VarDecl):
        return () if stmt.init is None else (stmt.init,)
    if isinstance(stmt, PragmaNode):
        return () if stmt.size is None else (stmt.size,)
    return ()
