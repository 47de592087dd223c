# src/application/parser.py
"""Recursive-descent parser producing the attributed syntax tree."""

import logging
from typing import List, Optional, Sequence, Tuple

from src.application.lexer import (
    Dialect,
    Token,
    TokenKind,
    float_literal_value,
    int_literal_value,
    tokenize,
)
from src.domain.ast import (
    ATTRIBUTE_ARITY,
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
    TopLevel,
    TranslationUnit,
    Unary,
    VarDecl,
    While,
)
from src.domain.exceptions import ParseError
from src.domain.value_objects import BaseType, SourceLocation, TypeExpr

logger = logging.getLogger(__name__)

TYPE_WORDS = frozenset({
    "void", "char", "short", "int", "long", "float", "double", "signed",
    "unsigned", "size_t",
})
QUALIFIERS = frozenset({"const", "static", "extern", "__kernel", "__global"})
ASSIGN_OPS = frozenset({"=", "+=", "-=", "*=", "/=", "%="})
BINARY_PRECEDENCE = {
    "||": 1,
    "&&": 2,
    "==": 3,
    "!=": 3,
    "<": 4,
    ">": 4,
    "<=": 4,
    ">=": 4,
    "+": 5,
    "-": 5,
    "*": 6,
    "/": 6,
    "%": 6,
}
UNARY_OPS = frozenset({"-", "+", "!", "*", "&"})
_STARPU_PRAGMAS = frozenset({"register", "unregister", "acquire", "wait", "opencl"})

_BASE_TYPES = {
    ("void",): BaseType.VOID,
    ("char",): BaseType.CHAR,
    ("char", "signed"): BaseType.SCHAR,
    ("char", "unsigned"): BaseType.UCHAR,
    ("short",): BaseType.SHORT,
    ("int", "short"): BaseType.SHORT,
    ("short", "signed"): BaseType.SHORT,
    ("int", "short", "signed"): BaseType.SHORT,
    ("short", "unsigned"): BaseType.USHORT,
    ("int", "short", "unsigned"): BaseType.USHORT,
    ("int",): BaseType.INT,
    ("signed",): BaseType.INT,
    ("int", "signed"): BaseType.INT,
    ("unsigned",): BaseType.UINT,
    ("int", "unsigned"): BaseType.UINT,
    ("long",): BaseType.LONG,
    ("int", "long"): BaseType.LONG,
    ("long", "signed"): BaseType.LONG,
    ("int", "long", "signed"): BaseType.LONG,
    ("long", "unsigned"): BaseType.ULONG,
    ("int", "long", "unsigned"): BaseType.ULONG,
    ("float",): BaseType.FLOAT,
    ("double",): BaseType.DOUBLE,
    ("size_t",): BaseType.SIZE_T,
}


def parse(tokens: Sequence[Token], file_name: str = "<input>") -> TranslationUnit:
    """Parse a token list into a translation unit."""
    unit = Parser(tokens, file_name).parse_translation_unit()
    logger.debug(f"Parsed {len(unit.declarations)} declarations from {file_name}")
    return unit


def parse_source(
    source: str, file_name: str = "<input>", dialect: Dialect = Dialect.TASKC
) -> TranslationUnit:
    return parse(tokenize(source, file_name, dialect), file_name)


class _Specifiers:
    """Declaration specifiers collected before a declarator."""

    def __init__(self, base: BaseType, const: bool, keywords: Tuple[str, ...],
                 address_space: Optional[str], location: SourceLocation):
        self.base = base
        self.const = const
        self.keywords = keywords
        self.address_space = address_space
        self.location = location


class Parser:
    """Parser over a token list."""

    def __init__(self, tokens: Sequence[Token], file_name: str = "<input>"):
        self._tokens = list(tokens)
        self._pos = 0
        self._file = file_name

    # Token helpers

    def _peek(self, offset: int = 0) -> Optional[Token]:
        index = self._pos + offset
        return self._tokens[index] if index < len(self._tokens) else None

    def _at_end(self) -> bool:
        return self._pos >= len(self._tokens)

    def _here(self) -> SourceLocation:
        token = self._peek()
        if token is not None:
            return token.location
        if self._tokens:
            last = self._tokens[-1].location
            return last.shifted(len(self._tokens[-1].text))
        return SourceLocation(self._file)

    def _check(self, text: str) -> bool:
        token = self._peek()
        return token is not None and token.kind in (TokenKind.PUNCT, TokenKind.KEYWORD) \
            and token.text == text

    def _accept(self, text: str) -> Optional[Token]:
        if self._check(text):
            return self._advance()
        return None

    def _advance(self) -> Token:
        token = self._tokens[self._pos]
        self._pos += 1
        return token

    def _error(self, expected: Sequence[str]) -> ParseError:
        token = self._peek()
        found = "end of input" if token is None else f"'{token.text}'"
        wanted = " or ".join(f"'{e}'" if len(e) <= 2 else e for e in expected)
        return ParseError(f"expected {wanted}, found {found}", self._here(), frozenset(expected))

    def _expect(self, text: str) -> Token:
        if not self._check(text):
            raise self._error([text])
        return self._advance()

    def _expect_identifier(self) -> Token:
        token = self._peek()
        if token is None or token.kind is not TokenKind.IDENTIFIER:
            raise self._error(["identifier"])
        return self._advance()

    def _is_type_start(self, offset: int = 0) -> bool:
        token = self._peek(offset)
        return token is not None and token.kind is TokenKind.KEYWORD and (
            token.text in TYPE_WORDS or token.text in QUALIFIERS
        )

    # Top level

    def parse_translation_unit(self) -> TranslationUnit:
        items: List[TopLevel] = []
        while not self._at_end():
            token = self._peek()
            if token.kind is TokenKind.PRAGMA:
                items.append(self._parse_pragma(self._advance()))
            else:
                items.extend(self._parse_external_declaration())
        return TranslationUnit(
            items=tuple(items), file=self._file, location=SourceLocation(self._file)
        )

    def _parse_external_declaration(self) -> List[TopLevel]:
        specs = self._parse_specifiers()
        depth = self._parse_pointers()
        name = self._expect_identifier()
        if self._check("("):
            params = self._parse_params()
            attributes = self._parse_attributes()
            return_type = TypeExpr(specs.base, depth, (), specs.const)
            body = self._parse_block() if self._check("{") else None
            if body is None:
                self._expect(";")
            return [FunctionDecl(
                name.text,
                return_type,
                params,
                attributes,
                body,
                specs.keywords,
                location=name.location,
            )]
        return self._parse_var_declarators(specs, depth, name)

    def _parse_var_declarators(
        self, specs: _Specifiers, depth: int, name: Token
    ) -> List[VarDecl]:
        declarations = []
        while True:
            dims = self._parse_array_dims(None)
            attributes = self._parse_attributes()
            init = self._parse_initializer() if self._accept("=") else None
            declarations.append(VarDecl(
                name.text,
                self._make_type(specs, depth, dims, name.location),
                attributes,
                init,
                specs.keywords,
                location=name.location,
            ))
            if not self._accept(","):
                break
            depth = self._parse_pointers()
            name = self._expect_identifier()
        self._expect(";")
        return declarations

    # Declarators

    def _parse_specifiers(self) -> _Specifiers:
        location = self._here()
        words: List[str] = []
        keywords: List[str] = []
        const = False
        address_space = None
        while self._is_type_start():
            text = self._advance().text
            if text == "const":
                const = True
            elif text == "__global":
                address_space = "__global"
            elif text in QUALIFIERS:
                keywords.append(text)
            else:
                words.append(text)
        base = _BASE_TYPES.get(tuple(sorted(words)))
        if base is None:
            if not words:
                raise self._error(["type"])
            raise ParseError(f"unsupported type '{' '.join(words)}'", location, frozenset({"type"}))
        return _Specifiers(base, const, tuple(keywords), address_space, location)

    def _parse_pointers(self) -> int:
        depth = 0
        while self._accept("*"):
            depth += 1
            if self._check("const"):
                raise ParseError("const-qualified pointers are not supported", self._here())
        return depth

    def _parse_array_dims(self, param_names: Optional[List[str]]) -> Tuple:
        dims = []
        while self._accept("["):
            token = self._peek()
            if self._accept("]"):
                dims.append(None)
                continue
            if token is not None and token.kind is TokenKind.INT:
                self._advance()
                value = int_literal_value(token.text)
                if value < 1:
                    raise ParseError("array dimension must be positive", token.location)
                dims.append(value)
            elif token is not None and token.kind is TokenKind.IDENTIFIER:
                self._advance()
                if param_names is not None and token.text not in param_names:
                    raise ParseError(
                        f"array dimension '{token.text}' does not name an earlier parameter",
                        token.location,
                    )
                dims.append(token.text)
            else:
                raise self._error(["integer", "identifier", "]"])
            self._expect("]")
        return tuple(dims)

    def _make_type(self, specs: _Specifiers, depth: int, dims: Tuple,
                   location: SourceLocation) -> TypeExpr:
        if dims and depth:
            raise ParseError("arrays of pointers are not supported", location)
        return TypeExpr(specs.base, depth, dims, specs.const, specs.address_space)

    def _parse_params(self) -> Tuple[Param, ...]:
        self._expect("(")
        params: List[Param] = []
        if self._check("void") and self._peek(1) is not None and self._peek(1).text == ")":
            self._advance()
        while not self._check(")"):
            if params:
                self._expect(",")
            specs = self._parse_specifiers()
            depth = self._parse_pointers()
            token = self._peek()
            name = None
            location = specs.location
            if token is not None and token.kind is TokenKind.IDENTIFIER:
                name = self._advance().text
                location = token.location
            dims = self._parse_array_dims([p.name for p in params if p.name])
            attributes = self._parse_attributes()
            params.append(Param(
                name,
                self._make_type(specs, depth, dims, location),
                attributes,
                location=location,
            ))
        self._expect(")")
        return tuple(params)

    def _parse_attributes(self) -> Tuple[Attribute, ...]:
        attributes: List[Attribute] = []
        while self._accept("__attribute__"):
            self._expect("(")
            self._expect("(")
            first = True
            while not self._check(")"):
                if not first:
                    self._expect(",")
                first = False
                token = self._peek()
                if token is None or token.kind not in (TokenKind.IDENTIFIER, TokenKind.KEYWORD):
                    raise self._error(["attribute name"])
                self._advance()
                args = self._parse_attribute_args() if self._check("(") else ()
                expected = ATTRIBUTE_ARITY.get(token.text)
                if expected is not None and len(args) != expected:
                    raise ParseError(
                        f"attribute '{token.text}' takes {expected} argument(s), got {len(args)}",
                        token.location,
                    )
                attributes.append(Attribute(token.text, args, location=token.location))
            self._expect(")")
            self._expect(")")
        return tuple(attributes)

    def _parse_attribute_args(self) -> Tuple[str, ...]:
        self._expect("(")
        groups: List[List[str]] = [[]]
        depth = 0
        while True:
            token = self._peek()
            if token is None:
                raise self._error([")"])
            self._advance()
            if token.text == "(" and token.kind is TokenKind.PUNCT:
                depth += 1
            elif token.text == ")" and token.kind is TokenKind.PUNCT:
                if depth == 0:
                    break
                depth -= 1
            elif token.text == "," and token.kind is TokenKind.PUNCT and depth == 0:
                groups.append([])
                continue
            groups[-1].append(token.text)
        if groups == [[]]:
            return ()
        return tuple(" ".join(group) for group in groups)

    def _parse_initializer(self):
        if self._check("{"):
            location = self._advance().location
            items: List[Expr] = []
            while not self._check("}"):
                if items:
                    self._expect(",")
                    if self._check("}"):
                        break
                items.append(self.parse_expression())
            self._expect("}")
            return InitList(tuple(items), location=location)
        return self.parse_expression()

    def _parse_type_name(self) -> TypeExpr:
        specs = self._parse_specifiers()
        depth = self._parse_pointers()
        return self._make_type(specs, depth, (), specs.location)

    # Pragmas

    def _parse_pragma(self, token: Token) -> PragmaNode:
        location = token.location
        head = token.text.split()
        if len(head) < 2 or head[0] != "starpu" or head[1] not in _STARPU_PRAGMAS:
            return PragmaNode(PragmaKind.UNKNOWN, text=token.text, location=location)
        words = tokenize(token.text, self._file, origin=token.payload_location)
        kind = words[1].text
        sub = Parser(words[2:], self._file)
        if kind == "register":
            var = sub._expect_identifier().text
            size = None if sub._at_end() else sub.parse_expression()
            sub._expect_end()
            return PragmaNode(PragmaKind.REGISTER, var=var, size=size, location=location)
        if kind in ("unregister", "acquire"):
            var = sub._expect_identifier().text
            sub._expect_end()
            return PragmaNode(PragmaKind(kind), var=var, location=location)
        if kind == "wait":
            sub._expect_end()
            return PragmaNode(PragmaKind.WAIT, location=location)
        impl = sub._expect_identifier().text
        file = sub._expect_string()
        kernel = sub._expect_string()
        group = sub._peek()
        if group is None or group.kind is not TokenKind.INT:
            raise sub._error(["group size"])
        sub._advance()
        group_size = int_literal_value(group.text)
        if group_size < 1:
            raise ParseError("group size must be a positive integer", group.location)
        sub._expect_end()
        return PragmaNode(
            PragmaKind.OPENCL,
            impl=impl,
            file=file,
            kernel=kernel,
            group_size=group_size,
            location=location,
        )

    def _expect_string(self) -> str:
        token = self._peek()
        if token is None or token.kind is not TokenKind.STRING:
            raise self._error(["text literal"])
        self._advance()
        return token.text[1:-1]

    def _expect_end(self) -> None:
        if not self._at_end():
            raise self._error(["end of pragma"])

    # Statements

    def _parse_block(self) -> Block:
        location = self._expect("{").location
        items: List[Stmt] = []
        while not self._check("}"):
            if self._at_end():
                raise self._error(["}"])
            items.extend(self._parse_block_item())
        self._expect("}")
        return Block(tuple(items), location=location)

    def _parse_block_item(self) -> List[Stmt]:
        if self._is_type_start():
            specs = self._parse_specifiers()
            depth = self._parse_pointers()
            name = self._expect_identifier()
            return list(self._parse_var_declarators(specs, depth, name))
        return [self._parse_statement()]

    def _parse_statement(self) -> Stmt:
        token = self._peek()
        if token is None:
            raise self._error(["statement"])
        if token.kind is TokenKind.PRAGMA:
            return self._parse_pragma(self._advance())
        if self._check("{"):
            return self._parse_block()
        if self._accept(";"):
            return Empty(location=token.location)
        if self._accept("if"):
            self._expect("(")
            condition = self.parse_expression()
            self._expect(")")
            then = self._parse_statement()
            otherwise = self._parse_statement() if self._accept("else") else None
            return If(condition, then, otherwise, location=token.location)
        if self._accept("while"):
            self._expect("(")
            condition = self.parse_expression()
            self._expect(")")
            return While(condition, self._parse_statement(), location=token.location)
        if self._accept("for"):
            return self._parse_for(token)
        if self._accept("return"):
            value = None if self._check(";") else self.parse_expression()
            self._expect(";")
            return Return(value, location=token.location)
        if self._is_type_start():
            raise ParseError(
                "declaration not allowed here", token.location, frozenset({"statement"})
            )
        statement = self._parse_simple_statement()
        self._expect(";")
        return statement

    def _parse_for(self, token: Token) -> For:
        self._expect("(")
        init = None
        if self._is_type_start():
            specs = self._parse_specifiers()
            depth = self._parse_pointers()
            name = self._expect_identifier()
            declarations = self._parse_var_declarators(specs, depth, name)
            if len(declarations) != 1:
                raise ParseError("one declaration expected in for initializer", name.location)
            init = declarations[0]
        elif not self._accept(";"):
            init = self._parse_simple_statement()
            self._expect(";")
        condition = None if self._check(";") else self.parse_expression()
        self._expect(";")
        step = None if self._check(")") else self._parse_simple_statement()
        self._expect(")")
        body = self._parse_statement()
        return For(init, condition, step, body, location=token.location)

    def _parse_simple_statement(self) -> Stmt:
        location = self._here()
        for op in ("++", "--"):
            if self._accept(op):
                target = self._parse_unary()
                self._require_lvalue(target)
                return IncDec(target, op, prefix=True, location=location)
        expr = self.parse_expression()
        token = self._peek()
        if token is not None and token.kind is TokenKind.PUNCT and token.text in ASSIGN_OPS:
            self._advance()
            self._require_lvalue(expr)
            value = self.parse_expression()
            return Assign(expr, token.text, value, location=location)
        for op in ("++", "--"):
            if self._accept(op):
                self._require_lvalue(expr)
                return IncDec(expr, op, prefix=False, location=location)
        return ExprStmt(expr, location=location)

    def _require_lvalue(self, expr: Expr) -> None:
        if isinstance(expr, (Name, Subscript)):
            return
        if isinstance(expr, Unary) and expr.op == "*":
            return
        raise ParseError("expression is not assignable", expr.location)

    # Expressions

    def parse_expression(self) -> Expr:
        return self._parse_binary(1)

    def _parse_binary(self, min_precedence: int) -> Expr:
        left = self._parse_unary()
        while True:
            token = self._peek()
            if token is None or token.kind is not TokenKind.PUNCT:
                return left
            precedence = BINARY_PRECEDENCE.get(token.text)
            if precedence is None or precedence < min_precedence:
                return left
            self._advance()
            right = self._parse_binary(precedence + 1)
            left = Binary(token.text, left, right, location=token.location)

    def _parse_unary(self) -> Expr:
        token = self._peek()
        if token is None:
            raise self._error(["expression"])
        if token.kind is TokenKind.PUNCT and token.text in UNARY_OPS:
            self._advance()
            return Unary(token.text, self._parse_unary(), location=token.location)
        if self._accept("sizeof"):
            if self._check("(") and self._is_type_start(1):
                self._advance()
                target = self._parse_type_name()
                self._expect(")")
                return SizeOf(target, location=token.location)
            return SizeOf(self._parse_unary(), location=token.location)
        if self._check("(") and self._is_type_start(1):
            self._advance()
            target = self._parse_type_name()
            self._expect(")")
            return CastExpr(target, self._parse_unary(), location=token.location)
        return self._parse_postfix()

    def _parse_postfix(self) -> Expr:
        expr = self._parse_primary()
        while True:
            token = self._peek()
            if self._accept("["):
                index = self.parse_expression()
                self._expect("]")
                expr = Subscript(expr, index, location=token.location)
            elif self._check("(") and isinstance(expr, Name):
                self._advance()
                args: List[Expr] = []
                while not self._check(")"):
                    if args:
                        self._expect(",")
                    args.append(self.parse_expression())
                self._expect(")")
                # Calls are located at their opening parenthesis.
                expr = Call(expr.ident, tuple(args), location=token.location)
            else:
                return expr

    def _parse_primary(self) -> Expr:
        token = self._peek()
        if token is None:
            raise self._error(["expression"])
        if token.kind is TokenKind.INT:
            self._advance()
            return IntLiteral(int_literal_value(token.text), token.text, location=token.location)
        if token.kind is TokenKind.FLOAT:
            self._advance()
            single = token.text[-1] in "fF"
            return FloatLiteral(
                float_literal_value(token.text), token.text, single, location=token.location
            )
        if token.kind is TokenKind.IDENTIFIER or token.is_(TokenKind.KEYWORD, "get_global_id"):
            self._advance()
            return Name(token.text, location=token.location)
        if self._accept("("):
            expr = self.parse_expression()
            self._expect(")")
            return expr
        raise self._error(["expression"])
