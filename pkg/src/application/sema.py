# src/application/sema.py
"""Semantic analysis: tasks, implementations, access modes, registrations."""

import logging
from collections import ChainMap
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

from src.domain.ast import (
    Attribute,
    Block,
    Call,
    For,
    FunctionDecl,
    Param,
    PragmaKind,
    PragmaNode,
    Stmt,
    TranslationUnit,
    VarDecl,
    child_statements,
    statement_expressions,
    walk_expression,
)
from src.domain.entities import (
    CodeletDescriptor,
    KernelBinding,
    ProgramModel,
    RegistrationSite,
    ScopedVarSite,
    TaskDecl,
    TaskImpl,
    TaskParam,
)
from src.domain.value_objects import (
    AccessMode,
    BaseType,
    Diagnostic,
    SourceLocation,
    Target,
    TargetConfig,
    TypeExpr,
    sort_diagnostics,
)

logger = logging.getLogger(__name__)

MAX_SCALAR_WIDTH = 8


@dataclass(frozen=True)
class Symbol:
    """Variable visible at some point of a function body."""
    name: str
    type: TypeExpr
    storage: str
    location: SourceLocation


def derive_access_mode(
    param: Param, diagnostics: Optional[List[Diagnostic]] = None
) -> AccessMode:
    """Access mode of a task parameter from its type and attributes."""
    is_output = param.has_attribute("output")
    if not param.type.is_buffer:
        if is_output and diagnostics is not None:
            diagnostics.append(Diagnostic.error(
                param.location,
                "'output' attribute applies only to pointer and array parameters",
                "E_OUTPUT_NOT_BUFFER",
            ))
        return AccessMode.SCALAR
    if is_output and param.type.const_qualified:
        if diagnostics is not None:
            diagnostics.append(Diagnostic.error(
                param.location,
                f"parameter '{param.name}' is both const-qualified and 'output'",
                "E_ACCESS_CONFLICT",
            ))
        return AccessMode.RW
    if is_output:
        return AccessMode.W
    if param.type.const_qualified:
        return AccessMode.R
    return AccessMode.RW


def signature_text(types: List[TypeExpr]) -> str:
    return ", ".join(str(t) for t in types) or "void"


def check_signature(task: TaskDecl, impl_fn: FunctionDecl) -> List[Diagnostic]:
    """One error at the first parameter where the implementation differs."""
    task_types = [p.type for p in task.params]
    impl_types = [p.type for p in impl_fn.params]
    mismatch = None
    for position, (expected, actual) in enumerate(zip(task_types, impl_types), start=1):
        if expected.normalized() != actual.normalized():
            mismatch = position
            break
    if mismatch is None and len(task_types) != len(impl_types):
        mismatch = min(len(task_types), len(impl_types)) + 1
    if mismatch is None and not impl_fn.return_type.is_void:
        mismatch = 0
    if mismatch is None:
        return []
    where = "return type" if mismatch == 0 else f"parameter {mismatch}"
    return [Diagnostic.error(
        impl_fn.location,
        f"signature of implementation '{impl_fn.name}' ({signature_text(impl_types)}) "
        f"does not match task '{task.name}' ({signature_text(task_types)}) at {where}",
        "E_SIG_MISMATCH",
    )]


def check_opencl_types(task: TaskDecl, config: TargetConfig) -> List[Diagnostic]:
    """Warn about parameter types whose OpenCL namesake differs."""
    diagnostics = []
    for param in task.params:
        base = param.type.base
        message = None
        if base is BaseType.SIZE_T:
            message = "'size_t' does not correspond to a known OpenCL type"
        elif base in (BaseType.LONG, BaseType.ULONG) and config.long_width_bits == 32:
            message = f"C type '{base.gcc_name}' differs from the same-named OpenCL type"
        elif base is BaseType.CHAR and not config.char_signed:
            message = "C type 'char' differs in signedness from the same-named OpenCL type"
        if message is not None:
            diagnostics.append(Diagnostic.warning(param.location, message, "W_OPENCL_TYPE"))
    return diagnostics


def attach_implicit_cpu_impl(task: TaskDecl, definition: FunctionDecl) -> TaskImpl:
    """Move a task definition's body into a synthesized cpu implementation."""
    body = task.take_body()
    function = replace(
        definition,
        name=f"{task.name}.cpu_implementation",
        attributes=(),
        body=body,
    )
    return TaskImpl(task.name, Target.CPU, function, defined=True, implicit=True)


def analyze(
    unit: TranslationUnit, config: TargetConfig, entry: str = "main"
) -> Tuple[ProgramModel, List[Diagnostic]]:
    """Build the program model; every failure is reported as a diagnostic."""
    return SemanticAnalyzer(unit, config, entry).analyze()


class SemanticAnalyzer:
    """Single-pass analyzer over one translation unit."""

    def __init__(self, unit: TranslationUnit, config: TargetConfig, entry: str = "main"):
        self._unit = unit
        self._config = config
        self._entry = entry
        self._diagnostics: List[Diagnostic] = []
        self._model = ProgramModel(file=unit.file, config=config)
        self._global_scope: Dict[str, Symbol] = {}

    def analyze(self) -> Tuple[ProgramModel, List[Diagnostic]]:
        # 1. File-scope declarations and function merging
        declarations: Dict[str, List[FunctionDecl]] = {}
        opencl_pragmas: List[PragmaNode] = []
        for item in self._unit.items:
            if isinstance(item, FunctionDecl):
                declarations.setdefault(item.name, []).append(item)
            elif isinstance(item, VarDecl):
                self._file_scope_variable(item)
            elif item.kind is PragmaKind.OPENCL:
                opencl_pragmas.append(item)
            elif item.kind is not PragmaKind.UNKNOWN:
                self._error(item.location, "this pragma may only appear inside a function",
                            "E_PRAGMA_SCOPE")
        functions = {name: self._merge(decls) for name, decls in declarations.items()}
        self._model.functions = functions

        # 2. Tasks and implementations
        for fn in functions.values():
            if fn.has_attribute("task"):
                self._declare_task(fn)
        for fn in functions.values():
            if fn.has_attribute("task_implementation"):
                self._declare_impl(fn)
        self._attach_implicit_impls(functions)
        for pragma in self._unit.pragmas:
            if pragma.kind is PragmaKind.OPENCL:
                self._bind_kernel(pragma)

        # 3. Codelets and OpenCL type checks
        self._build_codelets()

        # 4. Function bodies: registrations, scoped variables, task calls
        for fn in functions.values():
            if fn.body is not None:
                scope = ChainMap({}, self._global_scope)
                for param in fn.params:
                    if param.name:
                        scope[param.name] = Symbol(param.name, param.type, "param", param.location)
                self._walk(fn.body, scope, fn.name)

        entry = functions.get(self._entry)
        if entry is not None and entry.body is not None and not entry.has_attribute("task"):
            self._model.entry = entry
        diagnostics = sort_diagnostics(self._diagnostics)
        logger.info(
            f"Analyzed {self._unit.file}: {len(self._model.tasks)} tasks, "
            f"{len(self._model.codelets)} codelets, {len(diagnostics)} diagnostics"
        )
        return self._model, diagnostics

    # Helpers

    def _error(self, location: SourceLocation, message: str, code: str) -> None:
        self._diagnostics.append(Diagnostic.error(location, message, code))

    def _warning(self, location: SourceLocation, message: str, code: str) -> None:
        self._diagnostics.append(Diagnostic.warning(location, message, code))

    def _merge(self, decls: List[FunctionDecl]) -> FunctionDecl:
        """Combine a function's declarations; the definition supplies body and names."""
        definition = next((d for d in decls if d.body is not None), None)
        base = definition or decls[-1]
        attributes: List[Attribute] = []
        seen = set()
        for decl in decls:
            for attribute in decl.attributes:
                if attribute.name not in seen:
                    seen.add(attribute.name)
                    attributes.append(attribute)
        return replace(base, attributes=tuple(attributes), location=decls[0].location)

    def _file_scope_variable(self, decl: VarDecl) -> None:
        for name, code in (("task", "E_TASK_NON_FUNCTION"),
                           ("task_implementation", "E_IMPL_NON_FUNCTION")):
            if decl.has_attribute(name):
                self._error(decl.location, f"{name} attribute on non-function", code)
        for name in ("registered", "heap_allocated"):
            if decl.has_attribute(name):
                self._error(
                    decl.location,
                    f"'{name}' attribute is only valid on block-scope variables",
                    "E_SCOPED_FILE_SCOPE",
                )
        self._global_scope[decl.name] = Symbol(decl.name, decl.type, "static", decl.location)
        self._model.globals.append(decl)

    def _declare_task(self, fn: FunctionDecl) -> None:
        if not fn.return_type.is_void:
            self._error(fn.location, f"task '{fn.name}' must have return type 'void'",
                        "E_TASK_RETURN")
        params = []
        for param in fn.params:
            if not param.name:
                self._error(param.location, f"parameters of task '{fn.name}' must be named",
                            "E_PARAM_UNNAMED")
                return
            mode = derive_access_mode(param, self._diagnostics)
            if not param.type.is_buffer and param.type.size(self._config) > MAX_SCALAR_WIDTH:
                self._error(param.location,
                            f"scalar parameter '{param.name}' is wider than 8 bytes",
                            "E_SCALAR_WIDTH")
            params.append(TaskParam(param.name, param.type, mode, param.location))
        self._model.tasks[fn.name] = TaskDecl(fn.name, params, fn.location, fn.body)

    def _declare_impl(self, fn: FunctionDecl) -> None:
        attribute = fn.attribute("task_implementation")
        target_text = attribute.text_arg(0)
        task_name = attribute.text_arg(1)
        target = Target.parse(target_text)
        if target is None:
            self._error(
                attribute.location,
                f"'{target_text}' is not a valid target (expected cpu, opencl or cuda)",
                "E_IMPL_TARGET",
            )
            return
        task = self._model.tasks.get(task_name)
        if task is None:
            self._error(attribute.location, f"'{task_name}' is not a task", "E_IMPL_UNKNOWN_TASK")
            return
        self._diagnostics.extend(check_signature(task, fn))
        if target.is_device and fn.body is not None:
            self._error(
                fn.location,
                f"{target.value} implementation '{fn.name}' cannot have a body; "
                "bind it to a kernel with '#pragma starpu opencl'",
                "E_IMPL_DEVICE_BODY",
            )
        impl = TaskImpl(task.name, target, fn, defined=fn.body is not None)
        for existing in self._model.impls_of(task.name):
            if existing.target is target:
                self._error(
                    fn.location,
                    f"duplicate {target.value} implementation '{fn.name}' for task '{task.name}'",
                    "E_IMPL_DUPLICATE",
                )
                return
        self._model.impls.append(impl)

    def _attach_implicit_impls(self, functions: Dict[str, FunctionDecl]) -> None:
        for task in self._model.tasks.values():
            if task.implicit_cpu_body is None:
                continue
            explicit = [i for i in self._model.impls_of(task.name) if i.target is Target.CPU]
            if explicit:
                self._error(
                    explicit[0].function.location,
                    f"task '{task.name}' has a body and an explicit cpu implementation "
                    f"'{explicit[0].name}'",
                    "E_IMPL_AMBIGUOUS",
                )
                continue
            self._model.impls.append(attach_implicit_cpu_impl(task, functions[task.name]))

    def _bind_kernel(self, pragma: PragmaNode) -> None:
        impl = self._model.impl_named(pragma.impl)
        if impl is None or not impl.target.is_device:
            self._error(pragma.location, f"'{pragma.impl}' is not a device task implementation",
                        "E_OPENCL_PRAGMA")
            return
        binding = KernelBinding(pragma.file, pragma.kernel, pragma.group_size, pragma.location)
        try:
            impl.bind_kernel(binding)
        except ValueError as e:
            self._error(pragma.location, str(e), "E_OPENCL_PRAGMA")

    def _build_codelets(self) -> None:
        for task in self._model.tasks.values():
            impls = self._model.impls_of(task.name)
            for impl in impls:
                if impl.target is Target.CPU and not impl.defined:
                    self._error(impl.function.location,
                                f"cpu implementation '{impl.name}' is declared but not defined",
                                "E_IMPL_UNDEFINED")
                elif impl.target.is_device and impl.kernel_binding is None and not impl.defined:
                    self._error(
                        impl.function.location,
                        f"{impl.target.value} implementation '{impl.name}' has no kernel "
                        "binding; use '#pragma starpu opencl'",
                        "E_IMPL_UNBOUND",
                    )
            available = [i for i in impls if i.is_available]
            if not impls:
                self._error(task.location, f"task '{task.name}' has no implementation",
                            "E_TASK_NO_IMPL")
            if available:
                self._model.codelets[task.name] = CodeletDescriptor.for_task(task, available)
            if any(i.target.is_device for i in impls):
                self._diagnostics.extend(check_opencl_types(task, self._config))

    # Body walk

    def _walk(self, stmt: Stmt, scope: ChainMap, function: str) -> None:
        if isinstance(stmt, Block):
            inner = scope.new_child()
            for item in stmt.items:
                self._walk(item, inner, function)
            return
        if isinstance(stmt, For):
            inner = scope.new_child()
            for child in child_statements(stmt):
                self._walk(child, inner, function)
            self._check_calls(stmt)
            return
        self._check_calls(stmt)
        if isinstance(stmt, VarDecl):
            self._local_variable(stmt, scope, function)
        elif isinstance(stmt, PragmaNode):
            self._pragma(stmt, scope, function)
        else:
            for child in child_statements(stmt):
                self._walk(child, scope, function)

    def _check_calls(self, stmt: Stmt) -> None:
        for root in statement_expressions(stmt):
            for expr in walk_expression(root):
                if isinstance(expr, Call) and expr.function in self._model.tasks:
                    task = self._model.tasks[expr.function]
                    if len(expr.args) != len(task.params):
                        self._error(
                            expr.location,
                            f"task '{task.name}' expects {len(task.params)} arguments, "
                            f"got {len(expr.args)}",
                            "E_CALL_ARITY",
                        )

    def _local_variable(self, decl: VarDecl, scope: ChainMap, function: str) -> None:
        for name, code in (("task", "E_TASK_NON_FUNCTION"),
                           ("task_implementation", "E_IMPL_NON_FUNCTION")):
            if decl.has_attribute(name):
                self._error(decl.location, f"{name} attribute on non-function", code)
        registered = decl.has_attribute("registered")
        heap_allocated = decl.has_attribute("heap_allocated")
        storage = "static" if decl.is_static else "automatic"
        if registered or heap_allocated:
            scoped_ok = True
            for name, present in (("registered", registered), ("heap_allocated", heap_allocated)):
                if not present:
                    continue
                if not decl.type.array_dims:
                    self._error(decl.location,
                                f"'{name}' attribute requires an array-typed variable",
                                "E_SCOPED_NOT_ARRAY")
                    scoped_ok = False
                elif decl.type.static_count is None:
                    self._error(decl.location, f"size of '{decl.name}' is not a constant",
                                "E_SCOPED_UNSIZED")
                    scoped_ok = False
            if decl.is_static:
                self._error(decl.location,
                            f"scoped attributes cannot apply to static variable '{decl.name}'",
                            "E_SCOPED_STATIC")
                scoped_ok = False
            if scoped_ok:
                self._model.scoped_vars.append(ScopedVarSite(
                    decl.name, function, decl.location, decl.type, registered, heap_allocated
                ))
                if heap_allocated:
                    storage = "heap"
        scope[decl.name] = Symbol(decl.name, decl.type, storage, decl.location)

    def _pragma(self, pragma: PragmaNode, scope: ChainMap, function: str) -> None:
        if pragma.kind in (PragmaKind.WAIT, PragmaKind.UNKNOWN, PragmaKind.OPENCL):
            return
        symbol = scope.get(pragma.var)
        if symbol is None:
            self._error(pragma.location, f"use of undeclared identifier '{pragma.var}'",
                        "E_REG_UNDECLARED")
            return
        if not symbol.type.is_buffer:
            self._error(pragma.location, f"'{pragma.var}' is neither a pointer nor an array",
                        "E_REG_NOT_BUFFER")
            return
        if pragma.kind is not PragmaKind.REGISTER:
            return
        self._model.registrations.append(self._resolve_registration(pragma, symbol, function))

    def _resolve_registration(
        self, pragma: PragmaNode, symbol: Symbol, function: str
    ) -> Optional[RegistrationSite]:
        return resolve_registration(pragma, symbol, function, self._config, self._diagnostics)


def resolve_registration(
    pragma: PragmaNode,
    symbol: Symbol,
    function: str,
    config: TargetConfig,
    diagnostics: List[Diagnostic],
) -> RegistrationSite:
    """Registration record for a register pragma naming `symbol`."""
    static_count = symbol.type.static_count
    if pragma.size is None and static_count is None:
        diagnostics.append(Diagnostic.error(
            pragma.location,
            f"cannot determine size of '{pragma.var}'; specify it explicitly",
            "E_REG_NO_SIZE",
        ))
    automatic = symbol.storage == "automatic" and bool(symbol.type.array_dims)
    if automatic:
        diagnostics.append(Diagnostic.warning(
            pragma.location,
            f"'{pragma.var}' has automatic storage duration: its storage may be "
            "reclaimed before tasks that use it have completed",
            "W_REG_AUTOMATIC",
        ))
    elem = symbol.type.base
    return RegistrationSite(
        variable=pragma.var,
        function=function,
        location=pragma.location,
        count=pragma.size,
        static_count=None if pragma.size is not None else static_count,
        elem_type=elem,
        elem_size=elem.size(config),
        automatic=automatic,
    )
