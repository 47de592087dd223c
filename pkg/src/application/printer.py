# src/application/printer.py
"""Render syntax trees back to TaskC text."""

from dataclasses import replace
from typing import List, Optional, Tuple

from src.application.parser import BINARY_PRECEDENCE
from src.domain.ast import (
    Assign,
    Attribute,
    Binary,
    Block,
    Call,
    CastExpr,
    Empty,
    Expr,
    ExprStmt,
    FloatLiteral,
    For,
    FunctionDecl,
    If,
    IncDec,
    InitList,
    IntLiteral,
    Name,
    Param,
    PragmaKind,
    PragmaNode,
    Return,
    SizeOf,
    Stmt,
    Subscript,
    TranslationUnit,
    Unary,
    VarDecl,
    While,
)
from src.domain.value_objects import TypeExpr

INDENT = "    "
_UNARY_PRECEDENCE = 7
_POSTFIX_PRECEDENCE = 8


def print_unit(unit: TranslationUnit, strip_annotations: bool = False) -> str:
    """Emit C-subset text; optionally as the plain sequential program."""
    if strip_annotations:
        unit = strip(unit)
    chunks = []
    for item in unit.items:
        if isinstance(item, FunctionDecl):
            chunks.append(_function(item))
        elif isinstance(item, VarDecl):
            chunks.append(_var_decl(item) + ";\n")
        else:
            chunks.append(_pragma(item) + "\n")
    return "".join(chunks)


def strip(unit: TranslationUnit) -> TranslationUnit:
    """Remove task pragmas and known attributes, keeping everything else."""
    items = []
    for item in unit.items:
        if isinstance(item, PragmaNode):
            if not item.is_starpu:
                items.append(item)
        elif isinstance(item, FunctionDecl):
            items.append(replace(
                item,
                attributes=_plain_attributes(item.attributes),
                params=tuple(
                    replace(p, attributes=_plain_attributes(p.attributes)) for p in item.params
                ),
                body=None if item.body is None else _strip_stmt(item.body),
            ))
        else:
            items.append(replace(item, attributes=_plain_attributes(item.attributes)))
    return replace(unit, items=tuple(items))


def _plain_attributes(attributes: Tuple[Attribute, ...]) -> Tuple[Attribute, ...]:
    return tuple(a for a in attributes if not a.is_known)


def _strip_stmt(stmt: Stmt) -> Stmt:
    if isinstance(stmt, PragmaNode):
        return stmt if not stmt.is_starpu else Empty(location=stmt.location)
    if isinstance(stmt, Block):
        kept = [
            _strip_stmt(s) for s in stmt.items
            if not (isinstance(s, PragmaNode) and s.is_starpu)
        ]
        return replace(stmt, items=tuple(kept))
    if isinstance(stmt, VarDecl):
        return replace(stmt, attributes=_plain_attributes(stmt.attributes))
    if isinstance(stmt, If):
        return replace(
            stmt,
            then=_strip_stmt(stmt.then),
            otherwise=None if stmt.otherwise is None else _strip_stmt(stmt.otherwise),
        )
    if isinstance(stmt, For):
        return replace(
            stmt,
            init=None if stmt.init is None else _strip_stmt(stmt.init),
            body=_strip_stmt(stmt.body),
        )
    if isinstance(stmt, While):
        return replace(stmt, body=_strip_stmt(stmt.body))
    return stmt


# Declarations

def _attributes(attributes: Tuple[Attribute, ...]) -> str:
    if not attributes:
        return ""
    parts = [
        a.name if not a.args else f"{a.name}({', '.join(a.args)})" for a in attributes
    ]
    return f" __attribute__ (({', '.join(parts)}))"


def _declarator(specifiers: Tuple[str, ...], type_: TypeExpr, name: Optional[str]) -> str:
    words = list(specifiers)
    if type_.address_space:
        words.append(type_.address_space)
    if type_.const_qualified:
        words.append("const")
    words.append(type_.base.value)
    text = " ".join(words)
    if type_.pointer_depth:
        text += " " + "*" * type_.pointer_depth + (name or "")
    elif name:
        text += " " + name
    for dim in type_.array_dims:
        text += f"[{'' if dim is None else dim}]"
    return text


def _param(param: Param) -> str:
    return _declarator((), param.type, param.name) + _attributes(param.attributes)


def _function(fn: FunctionDecl) -> str:
    params = ", ".join(_param(p) for p in fn.params) if fn.params else "void"
    head = f"{_declarator(fn.specifiers, fn.return_type, fn.name)}({params})"
    head += _attributes(fn.attributes)
    if fn.body is None:
        return head + ";\n"
    return head + "\n" + "\n".join(_block_lines(fn.body, 0)) + "\n\n"


def _var_decl(decl: VarDecl) -> str:
    text = _declarator(decl.specifiers, decl.type, decl.name) + _attributes(decl.attributes)
    if decl.init is not None:
        text += " = " + _initializer(decl.init)
    return text


def _initializer(init) -> str:
    if isinstance(init, InitList):
        return "{" + ", ".join(expression(e) for e in init.items) + "}"
    return expression(init)


def _pragma(pragma: PragmaNode) -> str:
    kind = pragma.kind
    if kind is PragmaKind.UNKNOWN:
        return f"#pragma {pragma.text}"
    if kind is PragmaKind.REGISTER:
        size = "" if pragma.size is None else f" {expression(pragma.size)}"
        return f"#pragma starpu register {pragma.var}{size}"
    if kind in (PragmaKind.UNREGISTER, PragmaKind.ACQUIRE):
        return f"#pragma starpu {kind.value} {pragma.var}"
    if kind is PragmaKind.WAIT:
        return "#pragma starpu wait"
    return (
        f'#pragma starpu opencl {pragma.impl} "{pragma.file}" '
        f'"{pragma.kernel}" {pragma.group_size}'
    )


# Statements

def _block_lines(block: Block, depth: int) -> List[str]:
    pad = INDENT * depth
    lines = [pad + "{"]
    for item in block.items:
        lines.extend(_statement_lines(item, depth + 1))
    lines.append(pad + "}")
    return lines


def _simple(stmt: Stmt) -> str:
    """Statement text without the terminating semicolon."""
    if isinstance(stmt, VarDecl):
        return _var_decl(stmt)
    if isinstance(stmt, Assign):
        return f"{expression(stmt.target)} {stmt.op} {expression(stmt.value)}"
    if isinstance(stmt, IncDec):
        target = expression(stmt.target, _UNARY_PRECEDENCE)
        return f"{stmt.op}{target}" if stmt.prefix else f"{target}{stmt.op}"
    if isinstance(stmt, ExprStmt):
        return expression(stmt.expr)
    raise ValueError(f"Not a simple statement: {type(stmt).__name__}")


def _sub_statement_lines(stmt: Stmt, depth: int) -> List[str]:
    if isinstance(stmt, Block):
        return _block_lines(stmt, depth)
    return _statement_lines(stmt, depth + 1)


def _statement_lines(stmt: Stmt, depth: int) -> List[str]:
    pad = INDENT * depth
    if isinstance(stmt, Block):
        return _block_lines(stmt, depth)
    if isinstance(stmt, PragmaNode):
        return [pad + _pragma(stmt)]
    if isinstance(stmt, Empty):
        return [pad + ";"]
    if isinstance(stmt, Return):
        value = "" if stmt.value is None else " " + expression(stmt.value)
        return [pad + f"return{value};"]
    if isinstance(stmt, If):
        lines = [pad + f"if ({expression(stmt.condition)})"]
        lines.extend(_sub_statement_lines(stmt.then, depth))
        if stmt.otherwise is not None:
            lines.append(pad + "else")
            lines.extend(_sub_statement_lines(stmt.otherwise, depth))
        return lines
    if isinstance(stmt, While):
        lines = [pad + f"while ({expression(stmt.condition)})"]
        return lines + _sub_statement_lines(stmt.body, depth)
    if isinstance(stmt, For):
        init = "" if stmt.init is None else _simple(stmt.init)
        condition = "" if stmt.condition is None else " " + expression(stmt.condition)
        step = "" if stmt.step is None else " " + _simple(stmt.step)
        lines = [pad + f"for ({init};{condition};{step})"]
        return lines + _sub_statement_lines(stmt.body, depth)
    return [pad + _simple(stmt) + ";"]


# Expressions

def expression(expr: Expr, required: int = 0) -> str:
    """Render an expression, parenthesized if it binds looser than `required`."""
    text, precedence = _expression(expr)
    return f"({text})" if precedence < required else text


def _expression(expr: Expr) -> Tuple[str, int]:
    if isinstance(expr, IntLiteral):
        return expr.spelling, 9
    if isinstance(expr, FloatLiteral):
        return expr.spelling, 9
    if isinstance(expr, Name):
        return expr.ident, 9
    if isinstance(expr, Subscript):
        base = expression(expr.base, _POSTFIX_PRECEDENCE)
        return f"{base}[{expression(expr.index)}]", _POSTFIX_PRECEDENCE
    if isinstance(expr, Call):
        args = ", ".join(expression(a) for a in expr.args)
        return f"{expr.function}({args})", _POSTFIX_PRECEDENCE
    if isinstance(expr, Unary):
        operand = expression(expr.operand, _UNARY_PRECEDENCE)
        gap = " " if operand[:1] == expr.op and expr.op in "+-&" else ""
        return f"{expr.op}{gap}{operand}", _UNARY_PRECEDENCE
    if isinstance(expr, CastExpr):
        target = _declarator((), expr.target, None)
        return f"({target}) {expression(expr.operand, _UNARY_PRECEDENCE)}", _UNARY_PRECEDENCE
    if isinstance(expr, SizeOf):
        if isinstance(expr.operand, TypeExpr):
            return f"sizeof ({_declarator((), expr.operand, None)})", _UNARY_PRECEDENCE
        return f"sizeof {expression(expr.operand, _UNARY_PRECEDENCE)}", _UNARY_PRECEDENCE
    if isinstance(expr, Binary):
        precedence = BINARY_PRECEDENCE[expr.op]
        left = expression(expr.left, precedence)
        right = expression(expr.right, precedence + 1)
        return f"{left} {expr.op} {right}", precedence
    raise ValueError(f"Unknown expression node {type(expr).__name__}")
