# tests/application/test_dataflow.py
"""Tests for control-flow graphs, pointer roots and the registration check."""

from hypothesis import given, settings
from hypothesis import strategies as st

from src.application.dataflow import (
    build_cfg,
    check_program,
    check_registration,
    must_alias_roots,
)
from src.application.parser import parse_source
from src.domain.ast import ExprStmt
from src.domain.value_objects import Severity, SourceLocation
from tests.conftest import compile_source, corpus_text

TASK_PRELUDE = (
    "void t (double *x) __attribute__ ((task));\n"
    "void t_cpu (double *x) __attribute__ ((task_implementation (\"cpu\", t)))\n"
    "{ x[0] = 1; }\n"
)


def function(source: str, name: str = "f"):
    return parse_source(source).function(name)


def warnings_for(body: str) -> list:
    model, diagnostics = compile_source(TASK_PRELUDE + "void f (int c)\n{\n" + body + "\n}\n")
    assert not [d for d in diagnostics if d.is_error]
    return check_registration(model.functions["f"], model)


def call_position(cfg):
    for block in cfg.blocks:
        for index, stmt in enumerate(block.statements):
            if isinstance(stmt, ExprStmt):
                return block.id, index
    raise AssertionError("no call statement")


class TestBuildCfg:
    """Tests for build_cfg()."""

    def test_straight_line_code_is_one_block(self):
        cfg = build_cfg(function("void f (int a) { a = 1; a = 2; a += 3; }"))
        assert len(cfg.blocks) == 1
        assert len(cfg.blocks[0].statements) == 3

    def test_if_adds_branches_and_a_join(self):
        # Act
        cfg = build_cfg(function("void f (int a) { if (a) a = 1; a = 2; }"))

        # Assert
        assert len(cfg.blocks) == 4
        assert sorted(cfg.graph.edges) == [(0, 1), (0, 2), (1, 3), (2, 3)]
        assert cfg.dominates(0, 3)
        assert not cfg.dominates(1, 3)
        assert cfg.back_edges() == []

    def test_loop_has_header_body_and_exit(self):
        # Act
        cfg = build_cfg(function("void f (int n) { for (int i = 0; i < n; i++) n += i; }"))

        # Assert
        assert len(cfg.blocks) == 4
        assert cfg.back_edges() == [(2, 1)]
        assert cfg.dominates(1, 2)
        assert not cfg.dominates(2, 3)
        assert (2, 1) not in cfg.acyclic().edges

    def test_code_after_return_is_unreachable(self):
        cfg = build_cfg(function("int f (int a) { return a; a = 1; }"))
        assert cfg.reachable == {0}
        assert not cfg.dominates(0, 1)


class TestMustAliasRoots:
    """Tests for must_alias_roots()."""

    def test_each_malloc_is_its_own_root(self):
        # Arrange
        unit = parse_source(corpus_text("one_unregistered_pointer.tc"), "u.tc")
        fn = unit.function("one_unregistered_pointer")

        # Act
        roots = must_alias_roots(fn)

        # Assert
        env = roots.env_at(*call_position(roots.cfg))
        assert env["p"] == "malloc@u.tc:9:14"
        assert env["q"] == "malloc@u.tc:10:14"

    def test_copies_share_a_root(self):
        fn = function("void f (void) { double *p = malloc (8); double *q = p; q[0] = 1; }")
        roots = must_alias_roots(fn)
        env = roots.env_at(0, 2)
        assert env["q"] == env["p"] is not None

    def test_parameters_have_unknown_roots(self):
        fn = function("void f (double *x) { double *y = x; y[0] = 1; }")
        assert must_alias_roots(fn).env_at(0, 1)["y"] is None

    def test_arrays_are_their_own_roots(self):
        fn = function("void f (void) { float a[4]; a[0] = 1; }")
        assert must_alias_roots(fn).env_at(0, 1)["a"] == "a"

    def test_disagreeing_branches_lose_the_root(self):
        fn = function(
            "void f (int c) { double *p = malloc (8); if (c) p = malloc (16); p[0] = 1; }"
        )
        roots = must_alias_roots(fn)
        assert roots.env_at(3, 0)["p"] is None

    def test_pointer_arithmetic_loses_the_root(self):
        fn = function("void f (void) { double *p = malloc (8); p++; p[0] = 1; }")
        assert must_alias_roots(fn).env_at(0, 2)["p"] is None


class TestCheckRegistration:
    """Tests for check_registration() and check_program()."""

    def test_one_unregistered_pointer(self):
        # Arrange
        model, _ = compile_source(corpus_text("one_unregistered_pointer.tc"), "u.tc")

        # Act
        diagnostics = check_program(model)

        # Assert
        assert [str(d) for d in diagnostics] == [
            "u.tc:13:11: warning: variable 'q' may be used unregistered",
        ]
        assert diagnostics[0].severity is Severity.WARNING
        assert diagnostics[0].location == SourceLocation("u.tc", 13, 11)

    def test_skipped_functions_are_not_checked(self):
        model, _ = compile_source(corpus_text("one_unregistered_pointer.tc"), "u.tc")
        assert check_program(model, skip={"one_unregistered_pointer"}) == []

    def test_registered_attribute_covers_arrays(self):
        model, _ = compile_source(corpus_text("vector_scale.tc"))
        assert check_program(model) == []

    def test_registration_reaches_copies(self):
        body = (
            "  double *p = malloc (8);\n"
            "#pragma starpu register p 1\n"
            "  double *q = p;\n"
            "  t (q);"
        )
        assert warnings_for(body) == []

    def test_unregister_kills_the_registration(self):
        body = (
            "  double *p = malloc (8);\n"
            "#pragma starpu register p 1\n"
            "#pragma starpu unregister p\n"
            "  t (p);"
        )
        assert [d.code for d in warnings_for(body)] == ["W_UNREGISTERED"]

    def test_reallocation_needs_a_new_registration(self):
        body = (
            "  double *p = malloc (8);\n"
            "#pragma starpu register p 1\n"
            "  p = malloc (8);\n"
            "  t (p);"
        )
        assert len(warnings_for(body)) == 1

    def test_registration_on_one_branch_only(self):
        body = (
            "  double *p = malloc (8);\n"
            "  if (c) {\n#pragma starpu register p 1\n  }\n"
            "  t (p);"
        )
        assert len(warnings_for(body)) == 1

    def test_registration_inside_a_loop_does_not_cover_the_exit(self):
        body = (
            "  double *p = malloc (8);\n"
            "  while (c) {\n#pragma starpu register p 1\n  c = c - 1;\n  }\n"
            "  t (p);"
        )
        assert len(warnings_for(body)) == 1

    def test_unknown_provenance_is_not_reported(self):
        model, _ = compile_source(
            TASK_PRELUDE + "void f (double *x) { t (x); }\n"
        )
        assert check_program(model) == []


POINTERS = ("p", "q", "r")
FIRST_BODY_LINE = TASK_PRELUDE.count("\n") + 3


def simple_statements(names):
    kinds = st.tuples(st.sampled_from(["register", "unregister", "call"]), st.sampled_from(names))
    if len(names) == 1:
        return kinds
    aliases = st.tuples(st.just("alias"), st.permutations(names)).map(
        lambda s: ("alias", s[1][0], s[1][1])
    )
    return st.one_of(kinds, aliases)


def segments_for(names):
    simple = simple_statements(names)
    return st.one_of(
        simple,
        st.tuples(st.just("if"), st.lists(simple, max_size=2), st.lists(simple, max_size=2)),
        st.tuples(st.just("while"), st.lists(simple, max_size=3)),
    )


@st.composite
def registration_programs(draw):
    """Up to 3 pointers with registrations, aliasing, branches and loops, plus a
    segment list for unreachable code."""
    names = POINTERS[:draw(st.integers(1, 3))]
    segments = draw(st.lists(segments_for(names), max_size=6))
    dead = draw(st.lists(segments_for(names), min_size=1, max_size=3))
    return names, segments, dead


def render_statement(stmt) -> str:
    kind = stmt[0]
    if kind == "register":
        return f"#pragma starpu register {stmt[1]} 1\n"
    if kind == "unregister":
        return f"#pragma starpu unregister {stmt[1]}\n"
    if kind == "alias":
        return f"  {stmt[1]} = {stmt[2]};\n"
    if kind == "call":
        return f"  t ({stmt[1]});\n"
    if kind == "if":
        return (
            "  if (c) {\n" + "".join(map(render_statement, stmt[1]))
            + "  } else {\n" + "".join(map(render_statement, stmt[2])) + "  }\n"
        )
    return "  while (c) {\n" + "".join(map(render_statement, stmt[1])) + "  }\n"


def render_body(names, segments, extra: str = "", position: int = 0) -> str:
    """Declarations, segments and a final call per pointer; `extra` goes before
    segment `position`."""
    rendered = [render_statement(s) for s in segments]
    rendered.insert(position, extra)
    body = "".join(f"  double *{n} = malloc (8);\n" for n in names)
    return body + "".join(rendered) + "".join(f"  t ({n});\n" for n in names)


class PathOracle:
    """Walks the rendered function keeping every reachable state.

    Pointer roots follow all paths, loops included; a root is known where every
    path agrees. Registered roots follow acyclic paths: a loop body runs at most
    once and its effects do not reach the loop exit.
    """

    def __init__(self, names):
        self.names = names
        self.line = FIRST_BODY_LINE + len(names)
        self.warnings = []

    def root(self, envs, name):
        values = {env[self.names.index(name)] for env in envs}
        return values.pop() if len(values) == 1 else None

    def alias(self, envs, target, source):
        i, j = self.names.index(target), self.names.index(source)
        return {env[:i] + (env[j],) + env[i + 1:] for env in envs}

    def statement(self, stmt, envs, regs):
        kind = stmt[0]
        if kind == "if":
            self.line += 1
            then = self.statements(stmt[1], envs, regs)
            self.line += 1
            otherwise = self.statements(stmt[2], envs, regs)
            self.line += 1
            return then[0] | otherwise[0], then[1] | otherwise[1]
        if kind == "while":
            header = set(envs)
            while True:
                grown = set(header)
                for env in header:
                    after = {env}
                    for inner in stmt[1]:
                        if inner[0] == "alias":
                            after = self.alias(after, inner[1], inner[2])
                    grown |= after
                if grown == header:
                    break
                header = grown
            self.line += 1
            self.statements(stmt[1], header, regs)
            self.line += 1
            return header, regs
        root = self.root(envs, stmt[-1] if kind != "alias" else stmt[1])
        if kind == "alias":
            envs = self.alias(envs, stmt[1], stmt[2])
        elif kind == "register" and root is not None:
            regs = {r | {root} for r in regs}
        elif kind == "unregister" and root is not None:
            regs = {r - {root} for r in regs}
        elif kind == "call" and root is not None and any(root not in r for r in regs):
            self.warnings.append(
                (self.line, f"variable '{stmt[1]}' may be used unregistered")
            )
        self.line += 1
        return envs, regs

    def statements(self, stmts, envs, regs):
        for stmt in stmts:
            envs, regs = self.statement(stmt, envs, regs)
        return envs, regs

    def expected(self, segments):
        envs, regs = {tuple(self.names)}, {frozenset()}
        finals = [("call", n) for n in self.names]
        self.statements(list(segments) + finals, envs, regs)
        return sorted(self.warnings)


def found(diagnostics) -> list:
    return sorted((d.location.line, d.message) for d in diagnostics)


class TestRegistrationOracle:
    """The check agrees with path enumeration on random functions."""

    @settings(max_examples=150, deadline=None)
    @given(registration_programs())
    def test_warns_exactly_where_some_path_misses_registration(self, program):
        # Arrange
        names, segments, _ = program

        # Act
        diagnostics = warnings_for(render_body(names, segments))

        # Assert
        assert found(diagnostics) == PathOracle(names).expected(segments)

    @settings(max_examples=100, deadline=None)
    @given(registration_programs())
    def test_code_after_a_return_never_changes_the_warnings(self, program):
        names, segments, dead = program
        body = render_body(names, segments)
        tail = "  return;\n" + "".join(map(render_statement, dead))
        assert found(warnings_for(body + tail)) == found(warnings_for(body))

    @settings(max_examples=100, deadline=None)
    @given(registration_programs(), st.integers(0, 6))
    def test_unreachable_branch_tail_never_changes_the_warnings(self, program, position):
        # Arrange
        names, segments, dead = program
        position = min(position, len(segments))
        guarded = "  if (c) {\n  return;\n" + "".join(map(render_statement, dead)) + "  }\n"

        # Act
        plain = warnings_for(render_body(names, segments))
        extended = warnings_for(render_body(names, segments, guarded, position))

        # Assert
        assert sorted(d.message for d in extended) == sorted(d.message for d in plain)
