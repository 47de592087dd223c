# src/application/dataflow.py
"""Static check for task buffer arguments that may be used unregistered."""

import logging
from dataclasses import dataclass, field
from typing import Collection, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import networkx as nx

from src.domain.ast import (
    Assign,
    Block,
    Call,
    CastExpr,
    Expr,
    For,
    FunctionDecl,
    If,
    IncDec,
    InitList,
    Name,
    PragmaKind,
    PragmaNode,
    Return,
    Stmt,
    VarDecl,
    While,
    statement_expressions,
    walk_expression,
    walk_statements,
)
from src.domain.cfg import CFG, BasicBlock, FactKind, RegFact
from src.domain.entities import ProgramModel
from src.domain.value_objects import Diagnostic, TypeExpr

logger = logging.getLogger(__name__)

Env = Dict[str, Optional[str]]
Position = Tuple[int, int]


# CFG construction

class _CfgBuilder:
    def __init__(self):
        self.graph = nx.DiGraph()
        self.current = self._new_block()

    def _new_block(self) -> int:
        block_id = self.graph.number_of_nodes()
        self.graph.add_node(block_id, block=BasicBlock(block_id))
        return block_id

    def _append(self, stmt: Stmt) -> None:
        self.graph.nodes[self.current]["block"].statements.append(stmt)

    def _branch_to_new(self, *sources: Optional[int]) -> int:
        target = self._new_block()
        for source in sources:
            if source is not None:
                self.graph.add_edge(source, target)
        return target

    def visit(self, stmt: Stmt) -> None:
        if isinstance(stmt, Block):
            for item in stmt.items:
                self.visit(item)
        elif isinstance(stmt, If):
            self._append(stmt)
            head = self.current
            self.current = self._branch_to_new(head)
            self.visit(stmt.then)
            then_end = self.current
            self.current = self._branch_to_new(head)
            if stmt.otherwise is not None:
                self.visit(stmt.otherwise)
            else_end = self.current
            self.current = self._branch_to_new(then_end, else_end)
        elif isinstance(stmt, (For, While)):
            if isinstance(stmt, For) and stmt.init is not None:
                self._append(stmt.init)
            header = self._branch_to_new(self.current)
            self.current = header
            self._append(stmt)
            self.current = self._branch_to_new(header)
            self.visit(stmt.body)
            if isinstance(stmt, For) and stmt.step is not None:
                self._append(stmt.step)
            self.graph.add_edge(self.current, header)
            self.current = self._branch_to_new(header)
        elif isinstance(stmt, Return):
            self._append(stmt)
            # Whatever follows a return is unreachable.
            self.current = self._new_block()
        else:
            self._append(stmt)


def build_cfg(fn: FunctionDecl) -> CFG:
    """One block per straight-line run; if/for/while add the usual edges."""
    builder = _CfgBuilder()
    if fn.body is not None:
        builder.visit(fn.body)
    return CFG(builder.graph, entry=0)


# Must-alias roots

def _strip_casts(expr: Expr) -> Expr:
    while isinstance(expr, CastExpr):
        expr = expr.operand
    return expr


def _is_malloc(expr: Expr) -> bool:
    expr = _strip_casts(expr)
    return isinstance(expr, Call) and expr.function == "malloc"


@dataclass
class AliasRoots:
    """Root variable of every pointer before each statement of a CFG."""
    cfg: CFG
    pointers: Dict[str, TypeExpr]
    before: Dict[Position, Env] = field(default_factory=dict)

    def env_at(self, block: int, index: int) -> Env:
        return self.before.get((block, index), {})

    def root_of(self, block: int, index: int, expr: Expr) -> Optional[str]:
        """Root of a pointer expression; None when unknown."""
        expr = _strip_casts(expr)
        if not isinstance(expr, Name):
            return None
        return self.env_at(block, index).get(expr.ident)


def _declared_pointers(fn: FunctionDecl, globals_: Sequence[VarDecl]) -> Dict[str, TypeExpr]:
    found = {g.name: g.type for g in globals_ if g.type.is_buffer}
    for param in fn.params:
        if param.name and param.type.is_buffer:
            found[param.name] = param.type
    if fn.body is not None:
        for stmt in walk_statements(fn.body):
            if isinstance(stmt, VarDecl) and stmt.type.is_buffer:
                found[stmt.name] = stmt.type
    return found


def _entry_env(fn: FunctionDecl, globals_: Sequence[VarDecl]) -> Env:
    """Global arrays are their own roots; incoming pointers have unknown provenance."""
    env: Env = {}
    for decl in globals_:
        if decl.type.is_buffer:
            env[decl.name] = decl.name if decl.type.array_dims else None
    for param in fn.params:
        if param.name and param.type.is_buffer:
            env[param.name] = None
    return env


def _fresh_root(call_site: Expr) -> str:
    return f"malloc@{call_site.location}"


def _alias_transfer(stmt: Stmt, env: Env, pointers: Dict[str, TypeExpr]) -> Env:
    def value_root(expr: Expr) -> Optional[str]:
        if _is_malloc(expr):
            return _fresh_root(_strip_casts(expr))
        expr = _strip_casts(expr)
        if isinstance(expr, Name) and expr.ident in pointers:
            return env.get(expr.ident)
        return None

    if isinstance(stmt, VarDecl) and stmt.type.is_buffer:
        env = dict(env)
        if stmt.type.array_dims:
            env[stmt.name] = stmt.name
        elif stmt.init is not None and not isinstance(stmt.init, InitList):
            env[stmt.name] = value_root(stmt.init)
        else:
            env[stmt.name] = None
    elif isinstance(stmt, Assign) and isinstance(stmt.target, Name) \
            and stmt.target.ident in pointers:
        env = dict(env)
        env[stmt.target.ident] = value_root(stmt.value) if stmt.op == "=" else None
    elif isinstance(stmt, IncDec) and isinstance(stmt.target, Name) \
            and stmt.target.ident in pointers:
        env = dict(env)
        env[stmt.target.ident] = None
    return env


def _meet(envs: Iterable[Env]) -> Env:
    envs = list(envs)
    if not envs:
        return {}
    names = set().union(*envs)
    result: Env = {}
    for name in names:
        values = {env.get(name) for env in envs}
        result[name] = values.pop() if len(values) == 1 else None
    return result


def must_alias_roots(
    fn: FunctionDecl, cfg: Optional[CFG] = None, globals_: Sequence[VarDecl] = ()
) -> AliasRoots:
    """Copy propagation of pointer roots: `p = q` shares q's root, `p = malloc(...)`
    starts a fresh one, anything else makes the root unknown."""
    cfg = cfg or build_cfg(fn)
    pointers = _declared_pointers(fn, globals_)
    order = [n for n in nx.dfs_preorder_nodes(cfg.graph, cfg.entry)]
    block_out: Dict[int, Env] = {}
    block_in: Dict[int, Env] = {}
    changed = True
    while changed:
        changed = False
        for block_id in order:
            if block_id == cfg.entry:
                env = _entry_env(fn, globals_)
            else:
                env = _meet(
                    block_out[p] for p in cfg.graph.predecessors(block_id) if p in block_out
                )
            block_in[block_id] = env
            for stmt in cfg.block(block_id).statements:
                env = _alias_transfer(stmt, env, pointers)
            if block_out.get(block_id) != env:
                block_out[block_id] = env
                changed = True

    roots = AliasRoots(cfg, pointers)
    for block_id, env in block_in.items():
        for index, stmt in enumerate(cfg.block(block_id).statements):
            roots.before[(block_id, index)] = env
            env = _alias_transfer(stmt, env, pointers)
    return roots


# Registration check

def registration_facts(cfg: CFG, block_id: int, index: int) -> List[RegFact]:
    """Facts established by one statement."""
    stmt = cfg.block(block_id).statements[index]
    if isinstance(stmt, PragmaNode) and stmt.kind is PragmaKind.REGISTER:
        return [RegFact(stmt.var, stmt.location, FactKind.PRAGMA_REGISTER)]
    if isinstance(stmt, PragmaNode) and stmt.kind is PragmaKind.UNREGISTER:
        return [RegFact(stmt.var, stmt.location, FactKind.UNREGISTER)]
    if isinstance(stmt, VarDecl) and stmt.has_attribute("registered"):
        return [RegFact(stmt.name, stmt.location, FactKind.REGISTERED_ATTRIBUTE)]
    return []


def _registration_transfer(
    roots: AliasRoots, block_id: int, index: int, available: FrozenSet[str]
) -> FrozenSet[str]:
    stmt = roots.cfg.block(block_id).statements[index]
    env = roots.env_at(block_id, index)
    for fact in registration_facts(roots.cfg, block_id, index):
        root = fact.variable if fact.kind is FactKind.REGISTERED_ATTRIBUTE \
            else env.get(fact.variable)
        if root is None:
            continue
        available = available - {root} if fact.kills else available | {root}
    # A fresh allocation is a new region: no registration covers it yet.
    if isinstance(stmt, (Assign, VarDecl)):
        value = stmt.value if isinstance(stmt, Assign) else stmt.init
        if value is not None and not isinstance(value, InitList) and _is_malloc(value):
            available = available - {_fresh_root(_strip_casts(value))}
    return available


def _task_calls(stmt: Stmt, model: ProgramModel) -> List[Call]:
    if isinstance(stmt, (If, For, While)):
        return []
    calls = []
    for root in statement_expressions(stmt):
        for expr in walk_expression(root):
            if isinstance(expr, Call) and expr.function in model.tasks:
                calls.append(expr)
    return calls


def check_registration(
    fn: FunctionDecl, model: ProgramModel, roots: Optional[AliasRoots] = None
) -> List[Diagnostic]:
    """Warn for task buffer arguments whose root is not registered on every path."""
    roots = roots or must_alias_roots(fn, globals_=model.globals)
    cfg = roots.cfg
    dag = cfg.acyclic()
    available_out: Dict[int, FrozenSet[str]] = {}
    diagnostics: List[Diagnostic] = []
    for block_id in nx.topological_sort(dag):
        preds = list(dag.predecessors(block_id))
        if block_id == cfg.entry or not preds:
            available: FrozenSet[str] = frozenset()
        else:
            available = frozenset.intersection(*(available_out[p] for p in preds))
        for index, stmt in enumerate(cfg.block(block_id).statements):
            for call in _task_calls(stmt, model):
                diagnostics.extend(_check_call(call, model, roots, block_id, index, available))
            available = _registration_transfer(roots, block_id, index, available)
        available_out[block_id] = available
    if diagnostics:
        logger.debug(f"{len(diagnostics)} registration warnings in '{fn.name}'")
    return diagnostics


def _check_call(
    call: Call,
    model: ProgramModel,
    roots: AliasRoots,
    block_id: int,
    index: int,
    available: FrozenSet[str],
) -> List[Diagnostic]:
    task = model.tasks[call.function]
    found = []
    for param, arg in zip(task.params, call.args):
        if not param.is_buffer:
            continue
        root = roots.root_of(block_id, index, arg)
        if root is None or root in available:
            continue
        found.append(Diagnostic.warning(
            call.location,
            f"variable '{_strip_casts(arg).ident}' may be used unregistered",
            "W_UNREGISTERED",
        ))
    return found


def check_program(model: ProgramModel, skip: Collection[str] = ()) -> List[Diagnostic]:
    """Registration check over every function defined in the unit except `skip`."""
    diagnostics = []
    for fn in model.functions.values():
        if fn.body is not None and fn.name not in skip:
            diagnostics.extend(check_registration(fn, model))
    return diagnostics
