# src/application/lowering.py
"""Lowering of the program model to a serializable TaskProgram."""

import logging
from collections import ChainMap
from contextlib import contextmanager
from typing import Dict, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Set, Tuple

from src.application.lexer import Dialect
from src.application.parser import parse_source
from src.domain.ast import (
    Assign,
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
    Unary,
    VarDecl,
    While,
)
from src.domain.entities import ProgramModel, TaskDecl, TaskImpl
from src.domain.exceptions import CompileError, LexError, LoweringError, ParseError
from src.domain.program import (
    MAIN_OPS,
    AcquireOp,
    AllocOp,
    BinaryOp,
    Branch,
    BufferSlot,
    CallTaskOp,
    CleanupEntry,
    CodeletPlan,
    CompareOp,
    Const,
    Convert,
    EmbeddedKernel,
    Free,
    GlobalId,
    ImplPlan,
    KernelIR,
    KernelParam,
    LoadElem,
    LookupStep,
    Loop,
    Malloc,
    Move,
    Op,
    ParamSpec,
    PlainStmt,
    ProgramMetadata,
    RegisterOp,
    ReturnOp,
    ScalarSlot,
    ScopeCleanupOp,
    StoreElem,
    SubmitArg,
    TaskBodyPlan,
    TaskProgram,
    UnaryOp,
    UnregisterOp,
    WaitOp,
    WrapperPlan,
    iter_ops,
)
from src.domain.value_objects import (
    BaseType,
    SourceLocation,
    Target,
    TargetConfig,
    TypeExpr,
    common_type,
)

logger = logging.getLogger(__name__)

ARITHMETIC_OPS = frozenset({"+", "-", "*", "/", "%"})
COMPARISON_OPS = frozenset({"==", "!=", "<", ">", "<=", ">="})
_INDEX_TYPE = BaseType.LONG
_ADDRESS_TYPE = BaseType.SIZE_T


class _Var(NamedTuple):
    reg: str
    type: TypeExpr
    # scalar | buffer (kernel argument) | array | pointer (host addresses)
    kind: str


class _Value(NamedTuple):
    reg: str
    type: TypeExpr

    @property
    def base(self) -> BaseType:
        return self.type.base

    @property
    def is_pointer(self) -> bool:
        return self.type.is_buffer


def _scalar(base: BaseType) -> TypeExpr:
    return TypeExpr(base)


def _int_literal_type(literal: IntLiteral) -> BaseType:
    suffix = literal.text.lower().lstrip("0123456789abcdefx") if literal.text else ""
    unsigned = "u" in suffix
    if "l" in suffix:
        return BaseType.ULONG if unsigned else BaseType.LONG
    if unsigned:
        return BaseType.UINT if literal.value < 2**32 else BaseType.ULONG
    if literal.value < 2**31:
        return BaseType.INT
    if literal.text.lower().startswith("0x") and literal.value < 2**32:
        return BaseType.UINT
    return BaseType.LONG


class _Lowerer:
    """Statement and expression lowering shared by kernels and the entry procedure.

    In host mode (the entry procedure) buffers are simulated host addresses
    and task calls, pragmas, malloc and free are allowed.
    """

    def __init__(
        self,
        config: TargetConfig,
        device: bool = False,
        model: Optional[ProgramModel] = None,
    ):
        self._config = config
        self._device = device
        self._model = model
        self._host = model is not None
        self._ops: List[Op] = []
        self._temps = 0
        self._used: Set[str] = set()
        self._scope: ChainMap = ChainMap()
        self._cleanups: List[List[CleanupEntry]] = []
        self._file_scope = False

    # Emission helpers

    def _emit(self, op: Op) -> None:
        self._ops.append(op)

    @contextmanager
    def _capture(self) -> Iterator[List[Op]]:
        saved, self._ops = self._ops, []
        captured = self._ops
        try:
            yield captured
        finally:
            self._ops = saved

    def _temp(self) -> str:
        self._temps += 1
        return f"%{self._temps}"

    def _declare(self, name: str, type_: TypeExpr, kind: str) -> str:
        reg = name
        suffix = 0
        while reg in self._used:
            suffix += 1
            reg = f"{name}.{suffix}"
        self._used.add(reg)
        self._scope[name] = _Var(reg, type_, kind)
        return reg

    def _lookup(self, name: str, location: SourceLocation) -> _Var:
        var = self._scope.get(name)
        if var is None:
            raise LoweringError(f"'{name}' undeclared", location)
        return var

    def _const(self, value, base: BaseType) -> str:
        dst = self._temp()
        self._emit(Const(dst, value, base))
        return dst

    def _convert(self, value: _Value, base: BaseType, location: SourceLocation) -> str:
        if value.is_pointer:
            raise LoweringError("pointer used where a number is required", location)
        if value.base is base:
            return value.reg
        dst = self._temp()
        self._emit(Convert(dst, value.reg, base))
        return dst

    def _truth(self, value: _Value, location: SourceLocation) -> str:
        if value.is_pointer:
            zero = self._const(0, _ADDRESS_TYPE)
        else:
            zero = self._const(0, value.base)
        dst = self._temp()
        self._emit(CompareOp(dst, "!=", value.reg, zero))
        return dst

    # Scopes

    def _push_scope(self) -> None:
        self._scope = self._scope.new_child()
        self._cleanups.append([])

    def _pop_scope(self) -> None:
        entries = self._cleanups.pop()
        if entries:
            self._emit(ScopeCleanupOp(tuple(reversed(entries))))
        self._scope = self._scope.parents

    def file_scope(self, decls: Sequence[VarDecl]) -> None:
        """File-scope variables: static storage, never released."""
        self._file_scope = True
        for decl in decls:
            self.statement(decl)
        self._file_scope = False

    # Statements

    def _sited(self, ops: List[Op], site: str) -> Tuple[Op, ...]:
        """Entry-procedure IR grouped into plain statements that carry `site`."""
        if not self._host or not ops:
            return tuple(ops)
        return group_main_ops(tuple(ops), site)

    def statement(self, stmt: Stmt) -> None:
        if self._host and not isinstance(stmt, (Block, If, While, For)):
            with self._capture() as ops:
                self._statement(stmt)
            self._ops.extend(self._sited(ops, stmt.location.site))
        else:
            self._statement(stmt)

    def _statement(self, stmt: Stmt) -> None:
        if isinstance(stmt, Block):
            self._push_scope()
            for item in stmt.items:
                self.statement(item)
            self._pop_scope()
        elif isinstance(stmt, VarDecl):
            self._var_decl(stmt)
        elif isinstance(stmt, Assign):
            self._assign(stmt.target, stmt.op, stmt.value, stmt.location)
        elif isinstance(stmt, IncDec):
            one = IntLiteral(1, location=stmt.location)
            self._assign(stmt.target, stmt.op[0] + "=", one, stmt.location)
        elif isinstance(stmt, ExprStmt):
            self._expr_stmt(stmt)
        elif isinstance(stmt, If):
            with self._capture() as cond:
                test = self._truth(self.rvalue(stmt.condition), stmt.location)
            self._ops.extend(self._sited(cond, stmt.location.site))
            with self._capture() as then:
                self._nested(stmt.then)
            with self._capture() as orelse:
                if stmt.otherwise is not None:
                    self._nested(stmt.otherwise)
            self._emit(Branch(test, tuple(then), tuple(orelse)))
        elif isinstance(stmt, While):
            with self._capture() as cond:
                test = self._truth(self.rvalue(stmt.condition), stmt.location)
            with self._capture() as body:
                self._nested(stmt.body)
            self._emit(Loop(self._sited(cond, stmt.location.site), test, tuple(body)))
        elif isinstance(stmt, For):
            self._for(stmt)
        elif isinstance(stmt, Return):
            self._return(stmt)
        elif isinstance(stmt, PragmaNode):
            self._pragma(stmt)
        elif isinstance(stmt, Empty):
            pass
        else:
            raise LoweringError(f"unsupported statement {type(stmt).__name__}", stmt.location)

    def _nested(self, stmt: Stmt) -> None:
        """Sub-statement of if/while/for: gets its own scope even without braces."""
        if isinstance(stmt, Block):
            self.statement(stmt)
            return
        self._push_scope()
        self.statement(stmt)
        self._pop_scope()

    def _for(self, stmt: For) -> None:
        self._push_scope()
        if stmt.init is not None:
            self.statement(stmt.init)
        with self._capture() as cond:
            if stmt.condition is None:
                test = self._const(1, BaseType.INT)
            else:
                test = self._truth(self.rvalue(stmt.condition), stmt.location)
        with self._capture() as body:
            self._nested(stmt.body)
        with self._capture() as step:
            if stmt.step is not None:
                self.statement(stmt.step)
        self._emit(Loop(self._sited(cond, stmt.location.site), test, tuple(body), tuple(step)))
        self._pop_scope()

    def _return(self, stmt: Return) -> None:
        if stmt.value is not None and not self._host:
            raise LoweringError("task implementations cannot return a value", stmt.location)
        if stmt.value is not None:
            self.rvalue(stmt.value)
        for entries in reversed(self._cleanups):
            if entries:
                self._emit(ScopeCleanupOp(tuple(reversed(entries))))
        self._emit(ReturnOp())

    def _var_decl(self, decl: VarDecl) -> None:
        type_ = decl.type
        if type_.array_dims:
            if not self._host:
                raise LoweringError("local arrays are not supported in task implementations",
                                    decl.location)
            self._array_decl(decl)
            return
        if type_.is_buffer:
            if not self._host:
                raise LoweringError("pointer variables are not supported in task implementations",
                                    decl.location)
            if decl.init is None:
                value = None
            else:
                value = self.rvalue(decl.init)
                if not value.is_pointer:
                    raise LoweringError(f"'{decl.name}' must be initialized with a pointer",
                                        decl.location)
            reg = self._declare(decl.name, type_, "pointer")
            if value is None:
                self._emit(Const(reg, 0, _ADDRESS_TYPE))
            else:
                self._emit(Move(reg, value.reg))
            return
        if isinstance(decl.init, InitList):
            raise LoweringError("brace initializer for a scalar", decl.location)
        if decl.init is None:
            reg = self._declare(decl.name, type_, "scalar")
            self._emit(Const(reg, 0, type_.base))
            return
        src = self._convert(self.rvalue(decl.init), type_.base, decl.location)
        reg = self._declare(decl.name, type_, "scalar")
        self._emit(Move(reg, src))

    def _array_decl(self, decl: VarDecl) -> None:
        shape = decl.type.array_dims
        if not all(isinstance(d, int) for d in shape):
            raise LoweringError(f"size of '{decl.name}' is not a constant", decl.location)
        registered = decl.has_attribute("registered")
        heap_allocated = decl.has_attribute("heap_allocated")
        scoped = registered or heap_allocated
        reg = self._declare(decl.name, decl.type, "array")
        self._emit(AllocOp(reg, tuple(shape), decl.type.base, heap_allocated, scoped))
        if isinstance(decl.init, InitList):
            count = decl.type.static_count
            if len(decl.init.items) > count:
                raise LoweringError(f"too many initializers for '{decl.name}'", decl.location)
            for index, item in enumerate(decl.init.items):
                src = self._convert(self.rvalue(item), decl.type.base, item.location)
                self._emit(StoreElem(reg, self._const(index, _INDEX_TYPE), src, decl.type.base))
        elif decl.init is not None:
            raise LoweringError(f"array '{decl.name}' needs a brace initializer", decl.location)
        if registered:
            count = self._const(decl.type.static_count, _ADDRESS_TYPE)
            self._emit(RegisterOp(
                reg, count, decl.type.base.size(self._config), decl.type.base,
                decl.location.site,
            ))
        if self._cleanups and not self._file_scope:
            self._cleanups[-1].append(CleanupEntry(reg, registered, free=True))

    def _assign(self, target: Expr, op: str, value_expr: Expr, location: SourceLocation) -> None:
        if isinstance(target, Name):
            var = self._lookup(target.ident, target.location)
            if var.kind == "pointer":
                value = self.rvalue(value_expr)
                if op != "=" or not value.is_pointer:
                    raise LoweringError("pointer arithmetic is not supported", location)
                self._emit(Move(var.reg, value.reg))
                return
            if var.kind != "scalar":
                raise LoweringError(f"cannot assign to array '{target.ident}'", location)
            current = _Value(var.reg, var.type)
            result = self._combine(current, op, value_expr, location)
            src = self._convert(result, var.type.base, location)
            self._emit(Move(var.reg, src))
            return
        buffer, index, elem = self._element(target)
        current = None
        if op != "=":
            loaded = self._temp()
            self._emit(LoadElem(loaded, buffer, index, elem))
            current = _Value(loaded, _scalar(elem))
        result = self._combine(current, op, value_expr, location)
        src = self._convert(result, elem, location)
        self._emit(StoreElem(buffer, index, src, elem))

    def _combine(
        self, current: Optional[_Value], op: str, value_expr: Expr, location: SourceLocation
    ) -> _Value:
        value = self.rvalue(value_expr)
        if op == "=":
            return value
        return self._arithmetic(op[0], current, value, location)

    def _expr_stmt(self, stmt: ExprStmt) -> None:
        expr = stmt.expr
        if isinstance(expr, Call) and self._host:
            if expr.function in self._model.tasks:
                self._call_task(expr)
                return
            if expr.function == "free":
                if len(expr.args) != 1:
                    raise LoweringError("'free' takes one argument", expr.location)
                value = self.rvalue(expr.args[0])
                if not value.is_pointer:
                    raise LoweringError("'free' needs a pointer", expr.location)
                self._emit(Free(value.reg))
                return
        self.rvalue(expr)

    def _call_task(self, call: Call) -> None:
        task = self._model.tasks[call.function]
        if call.function not in self._model.codelets:
            raise LoweringError(f"task '{task.name}' has no usable implementation",
                                call.location)
        if len(call.args) != len(task.params):
            raise LoweringError(
                f"task '{task.name}' expects {len(task.params)} arguments", call.location
            )
        regs = []
        for param, arg in zip(task.params, call.args):
            value = self.rvalue(arg)
            if param.is_buffer:
                if not value.is_pointer:
                    raise LoweringError(
                        f"argument '{param.name}' of task '{task.name}' must be a pointer",
                        arg.location,
                    )
                regs.append(value.reg)
            else:
                regs.append(self._convert(value, param.type.base, arg.location))
        self._emit(CallTaskOp(task.name, tuple(regs), call.location.site))

    def _pragma(self, pragma: PragmaNode) -> None:
        if pragma.kind in (PragmaKind.UNKNOWN, PragmaKind.OPENCL):
            return
        if not self._host:
            raise LoweringError("task pragmas cannot appear in task implementations",
                                pragma.location)
        site = pragma.location.site
        if pragma.kind is PragmaKind.WAIT:
            self._emit(WaitOp(site))
            return
        var = self._lookup(pragma.var, pragma.location)
        if var.kind not in ("array", "pointer"):
            raise LoweringError(f"'{pragma.var}' is neither a pointer nor an array",
                                pragma.location)
        if pragma.kind is PragmaKind.REGISTER:
            if pragma.size is not None:
                count = self._convert(self.rvalue(pragma.size), _ADDRESS_TYPE, pragma.location)
            elif var.type.static_count is not None:
                count = self._const(var.type.static_count, _ADDRESS_TYPE)
            else:
                raise LoweringError(f"cannot determine size of '{pragma.var}'", pragma.location)
            base = var.type.base
            self._emit(RegisterOp(var.reg, count, base.size(self._config), base, site))
        elif pragma.kind is PragmaKind.UNREGISTER:
            self._emit(UnregisterOp(var.reg, site))
        else:
            self._emit(AcquireOp(var.reg, site))

    # Expressions

    def rvalue(self, expr: Expr) -> _Value:
        if isinstance(expr, IntLiteral):
            base = _int_literal_type(expr)
            return _Value(self._const(expr.value, base), _scalar(base))
        if isinstance(expr, FloatLiteral):
            base = BaseType.FLOAT if expr.single else BaseType.DOUBLE
            return _Value(self._const(expr.value, base), _scalar(base))
        if isinstance(expr, Name):
            var = self._lookup(expr.ident, expr.location)
            if var.kind == "buffer":
                raise LoweringError(f"buffer '{expr.ident}' used as a value", expr.location)
            if var.kind == "array":
                return _Value(var.reg, TypeExpr(var.type.base, 1))
            return _Value(var.reg, var.type)
        if isinstance(expr, Subscript) or (isinstance(expr, Unary) and expr.op == "*"):
            buffer, index, elem = self._element(expr)
            dst = self._temp()
            self._emit(LoadElem(dst, buffer, index, elem))
            return _Value(dst, _scalar(elem))
        if isinstance(expr, Unary):
            return self._unary(expr)
        if isinstance(expr, Binary):
            if expr.op in ("&&", "||"):
                return self._logical(expr)
            left = self.rvalue(expr.left)
            right = self.rvalue(expr.right)
            if expr.op in COMPARISON_OPS:
                return self._compare(expr.op, left, right, expr.location)
            return self._arithmetic(expr.op, left, right, expr.location)
        if isinstance(expr, CastExpr):
            return self._cast(expr)
        if isinstance(expr, SizeOf):
            return _Value(self._const(self._sizeof(expr), _ADDRESS_TYPE), _scalar(_ADDRESS_TYPE))
        if isinstance(expr, Call):
            return self._call(expr)
        raise LoweringError(f"unsupported expression {type(expr).__name__}", expr.location)

    def _unary(self, expr: Unary) -> _Value:
        if expr.op == "&":
            raise LoweringError("address-of is not supported", expr.location)
        value = self.rvalue(expr.operand)
        if value.is_pointer:
            if expr.op == "!":
                truth = self._truth(value, expr.location)
                dst = self._temp()
                self._emit(CompareOp(dst, "==", truth, self._const(0, BaseType.INT)))
                return _Value(dst, _scalar(BaseType.INT))
            raise LoweringError(f"invalid operand to unary '{expr.op}'", expr.location)
        if expr.op == "!":
            dst = self._temp()
            self._emit(CompareOp(dst, "==", value.reg, self._const(0, value.base)))
            return _Value(dst, _scalar(BaseType.INT))
        base = value.base.promoted()
        src = self._convert(value, base, expr.location)
        if expr.op == "+":
            return _Value(src, _scalar(base))
        dst = self._temp()
        self._emit(UnaryOp(dst, "neg", src, base))
        return _Value(dst, _scalar(base))

    def _logical(self, expr: Binary) -> _Value:
        """Short-circuit `&&`/`||` producing an int 0 or 1."""
        dst = self._temp()
        left = self._truth(self.rvalue(expr.left), expr.location)
        with self._capture() as rest:
            right = self._truth(self.rvalue(expr.right), expr.location)
            self._emit(Move(dst, right))
        if expr.op == "&&":
            self._emit(Const(dst, 0, BaseType.INT))
            self._emit(Branch(left, tuple(rest)))
        else:
            self._emit(Const(dst, 1, BaseType.INT))
            self._emit(Branch(left, (), tuple(rest)))
        return _Value(dst, _scalar(BaseType.INT))

    def _compare(self, op: str, left: _Value, right: _Value, location: SourceLocation) -> _Value:
        dst = self._temp()
        if left.is_pointer or right.is_pointer:
            if not (left.is_pointer and right.is_pointer) or op not in ("==", "!="):
                raise LoweringError("pointer arithmetic is not supported", location)
            self._emit(CompareOp(dst, op, left.reg, right.reg))
            return _Value(dst, _scalar(BaseType.INT))
        base = common_type(left.base, right.base, self._config)
        lhs = self._convert(left, base, location)
        rhs = self._convert(right, base, location)
        self._emit(CompareOp(dst, op, lhs, rhs))
        return _Value(dst, _scalar(BaseType.INT))

    def _arithmetic(
        self, op: str, left: _Value, right: _Value, location: SourceLocation
    ) -> _Value:
        if left.is_pointer or right.is_pointer:
            raise LoweringError("pointer arithmetic is not supported", location)
        base = common_type(left.base, right.base, self._config)
        if op == "%" and base.is_floating:
            raise LoweringError("invalid operands to binary '%'", location)
        lhs = self._convert(left, base, location)
        rhs = self._convert(right, base, location)
        dst = self._temp()
        self._emit(BinaryOp(dst, op, lhs, rhs, base))
        return _Value(dst, _scalar(base))

    def _cast(self, expr: CastExpr) -> _Value:
        target = expr.target
        value = self.rvalue(expr.operand)
        if target.is_buffer:
            if not self._host or not value.is_pointer:
                raise LoweringError("pointer casts are only supported on pointers in the "
                                    "entry procedure", expr.location)
            return _Value(value.reg, target)
        if target.is_void:
            return value
        return _Value(self._convert(value, target.base, expr.location), _scalar(target.base))

    def _sizeof(self, expr: SizeOf) -> int:
        operand = expr.operand
        if isinstance(operand, TypeExpr):
            return operand.size(self._config)
        if isinstance(operand, Name):
            var = self._lookup(operand.ident, operand.location)
            if var.kind == "buffer":
                return self._config.pointer_width_bits // 8
            return var.type.size(self._config)
        if isinstance(operand, Subscript) or (isinstance(operand, Unary) and operand.op == "*"):
            return self._element_type(operand).size(self._config)
        # sizeof does not evaluate its operand.
        with self._capture():
            value = self.rvalue(operand)
        return value.type.size(self._config)

    def _call(self, call: Call) -> _Value:
        if call.function == "get_global_id":
            if not self._device:
                raise LoweringError("get_global_id is only available in device kernels",
                                    call.location)
            if len(call.args) != 1 or not isinstance(call.args[0], IntLiteral):
                raise LoweringError("get_global_id takes one constant dimension",
                                    call.location)
            dst = self._temp()
            self._emit(GlobalId(dst, call.args[0].value))
            return _Value(dst, _scalar(_ADDRESS_TYPE))
        if call.function == "malloc" and self._host:
            if len(call.args) != 1:
                raise LoweringError("'malloc' takes one argument", call.location)
            size = self._convert(self.rvalue(call.args[0]), _ADDRESS_TYPE, call.location)
            dst = self._temp()
            self._emit(Malloc(dst, size))
            return _Value(dst, TypeExpr(BaseType.VOID, 1))
        if self._host and call.function in self._model.tasks:
            raise LoweringError(f"task '{call.function}' cannot be used as a value",
                                call.location)
        raise LoweringError(f"call to function '{call.function}' is not supported here",
                            call.location)

    # Element access

    def _element_base(self, expr: Expr) -> Tuple[Name, List[Expr]]:
        if isinstance(expr, Unary) and expr.op == "*":
            if not isinstance(expr.operand, Name):
                raise LoweringError("unsupported dereference", expr.location)
            return expr.operand, [IntLiteral(0, location=expr.location)]
        indices: List[Expr] = []
        node = expr
        while isinstance(node, Subscript):
            indices.insert(0, node.index)
            node = node.base
        if not isinstance(node, Name):
            raise LoweringError("subscripted value is not an array or pointer", expr.location)
        return node, indices

    def _element_type(self, expr: Expr) -> TypeExpr:
        name, _ = self._element_base(expr)
        return _scalar(self._lookup(name.ident, name.location).type.base)

    def _element(self, expr: Expr) -> Tuple[str, str, BaseType]:
        """Buffer register, flattened row-major index register, element type."""
        name, indices = self._element_base(expr)
        var = self._lookup(name.ident, name.location)
        if var.kind == "scalar":
            raise LoweringError(f"'{name.ident}' is not an array or pointer", expr.location)
        dims = var.type.array_dims or (None,)
        if len(indices) != len(dims):
            raise LoweringError(f"'{name.ident}' needs {len(dims)} subscripts", expr.location)
        flat = None
        for position, index_expr in enumerate(indices):
            index = self.rvalue(index_expr)
            if index.is_pointer or not index.base.is_integer:
                raise LoweringError("array subscript is not an integer", index_expr.location)
            index_reg = self._convert(index, _INDEX_TYPE, index_expr.location)
            if flat is None:
                flat = index_reg
                continue
            extent = self._extent(dims[position], expr.location)
            scaled = self._temp()
            self._emit(BinaryOp(scaled, "*", flat, extent, _INDEX_TYPE))
            flat = self._temp()
            self._emit(BinaryOp(flat, "+", scaled, index_reg, _INDEX_TYPE))
        return var.reg, flat, var.type.base

    def _extent(self, dim, location: SourceLocation) -> str:
        if isinstance(dim, int):
            return self._const(dim, _INDEX_TYPE)
        if isinstance(dim, str):
            var = self._lookup(dim, location)
            return self._convert(_Value(var.reg, var.type), _INDEX_TYPE, location)
        raise LoweringError("array extent is unknown", location)


# Kernels

def _kernel_params(params: Tuple[Param, ...]) -> Tuple[KernelParam, ...]:
    return tuple(
        KernelParam(p.name, "buffer" if p.type.is_buffer else "scalar", p.type.base)
        for p in params
    )


def lower_kernel_body(
    fn: FunctionDecl, config: TargetConfig, device: bool = False
) -> KernelIR:
    """Lower an implementation (or device kernel) body to kernel IR."""
    lowerer = _Lowerer(config, device=device)
    lowerer._push_scope()
    for param in fn.params:
        if not param.name:
            raise LoweringError(f"parameters of '{fn.name}' must be named", param.location)
        kind = "buffer" if param.type.is_buffer else "scalar"
        lowerer._declare(param.name, param.type, kind)
    if fn.body is not None:
        for item in fn.body.items:
            lowerer.statement(item)
    ir = KernelIR(_kernel_params(fn.params), tuple(lowerer._ops), device)
    validate_kernel_ir(ir)
    return ir


def lower_wrapper(task: TaskDecl, config: TargetConfig) -> WrapperPlan:
    """Buffer slots in buffer-parameter order; scalars packed in declaration order."""
    slots = tuple(
        BufferSlot(p.name, slot, p.type.base) for slot, p in enumerate(task.buffer_params)
    )
    pack = tuple(
        ScalarSlot(p.name, p.type.base, p.type.size(config)) for p in task.scalar_params
    )
    return WrapperPlan(slots, pack)


def lower_task_body(task: TaskDecl) -> TaskBodyPlan:
    lookups = tuple(LookupStep(p.name, slot) for slot, p in enumerate(task.buffer_params))
    args = tuple(
        SubmitArg("buffer" if p.is_buffer else "scalar", p.name) for p in task.params
    )
    return TaskBodyPlan(
        task=task.name,
        lookups=lookups,
        codelet=task.name,
        args=args,
        failure_message=f"failed to insert task '{task.name}'",
    )


def embed_kernel(
    impl: TaskImpl, task: TaskDecl, source_text: Optional[str], config: TargetConfig
) -> EmbeddedKernel:
    """Capture a device kernel's source and lower it for simulation."""
    binding = impl.kernel_binding
    if binding is None:
        raise CompileError(f"implementation '{impl.name}' is not bound to a kernel",
                           impl.function.location)
    if source_text is None:
        raise CompileError(f"kernel file '{binding.file}' not found", binding.location)
    try:
        unit = parse_source(source_text, binding.file, Dialect.OPENCL)
    except (LexError, ParseError) as e:
        raise CompileError(f"cannot parse kernel file '{binding.file}': {e}",
                           binding.location) from e
    kernel = unit.function(binding.kernel)
    if kernel is None or kernel.body is None:
        raise CompileError(f"kernel '{binding.kernel}' not found in {binding.file}",
                           binding.location)
    expected = [p.type.normalized() for p in task.params]
    actual = [p.type.normalized() for p in kernel.params]
    if expected != actual:
        raise CompileError(
            f"kernel '{binding.kernel}' in {binding.file} does not match the signature "
            f"of task '{task.name}'",
            binding.location,
        )
    try:
        kernel_ir = lower_kernel_body(kernel, config, device=True)
    except LoweringError as e:
        raise CompileError(f"kernel '{binding.kernel}': {e}", binding.location) from e
    return EmbeddedKernel(
        impl=impl.name,
        file=binding.file,
        kernel_name=binding.kernel,
        group_size=binding.group_size,
        source_text=source_text,
        kernel_ir=kernel_ir,
    )


def lower_codelet(
    task: TaskDecl,
    model: ProgramModel,
    kernel_sources: Mapping[str, str],
) -> CodeletPlan:
    descriptor = model.codelets[task.name]
    wrapper = lower_wrapper(task, model.config)
    impls = []
    for target in Target:
        impl = descriptor.impls.get(target)
        if impl is None:
            continue
        if target.is_device:
            embedded = embed_kernel(
                impl, task, kernel_sources.get(impl.kernel_binding.file), model.config
            )
            impls.append(ImplPlan(impl.name, target, wrapper, embedded=embedded))
        else:
            kernel_ir = lower_kernel_body(impl.function, model.config)
            impls.append(ImplPlan(impl.name, target, wrapper, kernel_ir=kernel_ir))
    params = tuple(ParamSpec(p.name, p.type.base, p.mode) for p in task.params)
    return CodeletPlan(task.name, params, lower_task_body(task), tuple(impls))


# Entry procedure

def _is_main_level(op: Op) -> bool:
    return any(isinstance(o, MAIN_OPS + (ReturnOp,)) for o in iter_ops((op,)))


def group_main_ops(ops: Tuple[Op, ...], site: str = "") -> Tuple[Op, ...]:
    """Gather straight-line IR into plain statements; control flow that contains
    main ops stays at the main level."""
    result: List[Op] = []
    run: List[Op] = []

    def flush() -> None:
        if run:
            result.append(PlainStmt(tuple(run), site))
            run.clear()

    for op in ops:
        if not _is_main_level(op):
            run.append(op)
            continue
        flush()
        if isinstance(op, Loop):
            result.append(Loop(
                group_main_ops(op.cond, site), op.test, group_main_ops(op.body, site),
                group_main_ops(op.step, site),
            ))
        elif isinstance(op, Branch):
            result.append(Branch(
                op.test, group_main_ops(op.then, site), group_main_ops(op.orelse, site)
            ))
        else:
            result.append(op)
    flush()
    return tuple(result)


def lower_main(model: ProgramModel) -> Tuple[Op, ...]:
    """File-scope variables, then the entry procedure's body."""
    lowerer = _Lowerer(model.config, model=model)
    lowerer._push_scope()
    lowerer.file_scope(model.globals)
    if model.entry is not None:
        lowerer.statement(model.entry.body)
    lowerer._pop_scope()
    ops = group_main_ops(tuple(lowerer._ops))
    validate_main_ops(ops)
    return ops


def lower_scoped_vars(fn: FunctionDecl, model: ProgramModel) -> Tuple[Op, ...]:
    """Allocation, registration and cleanup ops produced by a function's scoped variables."""
    lowerer = _Lowerer(model.config, model=model)
    lowerer._push_scope()
    lowerer.file_scope(model.globals)
    lowerer.statement(fn.body)
    lowerer._pop_scope()
    scoped = {op.var for op in iter_ops(tuple(lowerer._ops))
              if isinstance(op, AllocOp) and op.scoped}
    result: List[Op] = []
    for op in iter_ops(tuple(lowerer._ops)):
        if isinstance(op, (AllocOp, RegisterOp)) and op.var in scoped:
            result.append(op)
        elif isinstance(op, ScopeCleanupOp):
            entries = tuple(e for e in op.entries if e.var in scoped)
            if entries:
                result.append(ScopeCleanupOp(entries))
    return tuple(result)


def emit_program(model: ProgramModel, kernel_sources: Mapping[str, str]) -> TaskProgram:
    """Complete TaskProgram for a model that passed analysis without errors."""
    codelets = tuple(
        lower_codelet(model.tasks[name], model, kernel_sources) for name in model.codelets
    )
    program = TaskProgram(
        codelets=codelets,
        main_ops=lower_main(model),
        metadata=ProgramMetadata(
            source_file=model.file,
            config=model.config,
            entry=model.entry.name if model.entry is not None else "main",
        ),
    )
    logger.info(
        f"Lowered {model.file}: {len(codelets)} codelets, {len(program.main_ops)} main ops"
    )
    return program


# Validation

def _reads_writes(op: Op) -> Tuple[Tuple[str, ...], Tuple[str, ...]]:
    if isinstance(op, Const):
        return (), (op.dst,)
    if isinstance(op, (Move, Convert, UnaryOp)):
        return (op.src,), (op.dst,)
    if isinstance(op, (BinaryOp, CompareOp)):
        return (op.lhs, op.rhs), (op.dst,)
    if isinstance(op, LoadElem):
        return (op.buffer, op.index), (op.dst,)
    if isinstance(op, StoreElem):
        return (op.buffer, op.index, op.src), ()
    if isinstance(op, GlobalId):
        return (), (op.dst,)
    if isinstance(op, Malloc):
        return (op.size,), (op.dst,)
    if isinstance(op, Free):
        return (op.src,), ()
    if isinstance(op, AllocOp):
        return (), (op.var,)
    if isinstance(op, RegisterOp):
        return (op.var, op.count), ()
    if isinstance(op, (UnregisterOp, AcquireOp)):
        return (op.var,), ()
    if isinstance(op, CallTaskOp):
        return op.args, ()
    if isinstance(op, ScopeCleanupOp):
        return tuple(e.var for e in op.entries), ()
    return (), ()


_Types = Dict[str, Optional[BaseType]]


def _written_type(op: Op, types: _Types) -> Optional[BaseType]:
    if isinstance(op, (Const, Convert, BinaryOp, UnaryOp, LoadElem)):
        return op.ctype
    if isinstance(op, CompareOp):
        return BaseType.INT
    if isinstance(op, GlobalId):
        return _ADDRESS_TYPE
    if isinstance(op, Move):
        return types.get(op.src)
    # Addresses.
    return None


def _validate(ops: Tuple[Op, ...], types: _Types, device: bool) -> _Types:
    for position, op in enumerate(ops):
        reads, writes = _reads_writes(op)
        for reg in reads:
            if reg not in types:
                raise LoweringError(f"register '{reg}' is read before it is written "
                                    f"(op {position})")
        if isinstance(op, (LoadElem, StoreElem)):
            index_type = types[op.index]
            if index_type is None or not index_type.is_integer:
                raise LoweringError(f"buffer index '{op.index}' is not integer-valued "
                                    f"(op {position})")
        if isinstance(op, GlobalId) and not device:
            raise LoweringError("global_id outside a device kernel")
        if isinstance(op, Loop):
            after_cond = _validate(op.cond, dict(types), device)
            if op.test not in after_cond:
                raise LoweringError(f"loop test '{op.test}' is never written")
            after_body = _validate(op.body, dict(after_cond), device)
            _validate(op.step, after_body, device)
            types = after_cond
        elif isinstance(op, Branch):
            if op.test not in types:
                raise LoweringError(f"branch test '{op.test}' is read before it is written")
            then = _validate(op.then, dict(types), device)
            orelse = _validate(op.orelse, dict(types), device)
            types = {reg: then[reg] for reg in then if reg in orelse}
        elif isinstance(op, PlainStmt):
            types = _validate(op.ops, types, device)
        for reg in writes:
            types[reg] = _written_type(op, types)
    return types


def validate_kernel_ir(ir: KernelIR) -> None:
    """Registers written before read, integer indices, global ids only on devices."""
    types: _Types = {
        p.name: (p.ctype if p.kind == "scalar" else None) for p in ir.params
    }
    _validate(ir.body, types, ir.device)


def validate_main_ops(ops: Tuple[Op, ...]) -> None:
    _validate(ops, {}, device=False)
