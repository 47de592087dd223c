# src/application/lexer.py
"""Tokenizer for TaskC and the OpenCL kernel dialect."""

import re
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

from src.domain.exceptions import LexError
from src.domain.value_objects import SourceLocation


class TokenKind(Enum):
    KEYWORD = "kw"
    IDENTIFIER = "ident"
    INT = "int"
    FLOAT = "float"
    STRING = "string"
    PUNCT = "punct"
    PRAGMA = "pragma"


class Dialect(Enum):
    TASKC = "taskc"
    OPENCL = "opencl"


KEYWORDS = frozenset({
    "void", "char", "short", "int", "long", "float", "double", "signed",
    "unsigned", "size_t", "const", "static", "extern", "if", "else", "for",
    "while", "return", "sizeof", "__attribute__",
})
DEVICE_KEYWORDS = frozenset({"__kernel", "__global", "get_global_id"})


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str
    location: SourceLocation
    # Pragma tokens only: where the payload starts.
    payload_location: Optional[SourceLocation] = None

    def is_(self, kind: TokenKind, text: Optional[str] = None) -> bool:
        return self.kind is kind and (text is None or self.text == text)

    def __str__(self) -> str:
        return f"{self.kind.value}({self.text})"


TOKEN_SPEC = [
    ("PRAGMA", r"\#[ \t]*pragma\b[^\n]*"),
    ("DIRECTIVE", r"\#[^\n]*"),
    ("BLOCK_COMMENT", r"/\*(?s:.*?)\*/"),
    ("OPEN_COMMENT", r"/\*"),
    ("LINE_COMMENT", r"//[^\n]*"),
    ("FLOAT", r"(?:\d+\.\d*|\.\d+)(?:[eE][+-]?\d+)?[fFlL]?|\d+[eE][+-]?\d+[fFlL]?"),
    ("INT", r"(?:0[xX][0-9a-fA-F]+|\d+)[uUlL]*"),
    ("STRING", r'"(?:[^"\\\n]|\\.)*"'),
    ("OPEN_STRING", r'"'),
    ("ID", r"[A-Za-z_]\w*"),
    (
        "PUNCT",
        r"\+\+|--|\+=|-=|\*=|/=|%=|==|!=|<=|>=|&&|\|\||[{}()\[\];,=<>+\-*/%!&.?:~|^]",
    ),
    ("NEWLINE", r"\n"),
    ("SKIP", r"[ \t\r\f\v]+"),
    ("MISMATCH", r"."),
]
_MASTER = re.compile("|".join(f"(?P<{name}>{pattern})" for name, pattern in TOKEN_SPEC))
_PRAGMA_HEAD = re.compile(r"\#[ \t]*pragma[ \t]*")


def tokenize(
    source: str,
    file_name: str = "<input>",
    dialect: Dialect = Dialect.TASKC,
    origin: Optional[SourceLocation] = None,
) -> List[Token]:
    """Split source text into tokens; comments are dropped.

    `origin` places the first character somewhere other than 1:1, which is
    how pragma payloads are re-tokenized with accurate locations.
    """
    keywords = KEYWORDS | DEVICE_KEYWORDS if dialect is Dialect.OPENCL else KEYWORDS
    line = origin.line if origin else 1
    first_column = origin.column if origin else 1
    line_start = 0
    tokens: List[Token] = []

    def location_of(offset: int) -> SourceLocation:
        column = offset - line_start + 1
        if line == (origin.line if origin else 1):
            column += first_column - 1
        return SourceLocation(file_name, line, column)

    for match in _MASTER.finditer(source):
        kind = match.lastgroup
        text = match.group()
        location = location_of(match.start())
        if kind == "NEWLINE":
            line += 1
            line_start = match.end()
        elif kind in ("SKIP", "LINE_COMMENT"):
            continue
        elif kind == "BLOCK_COMMENT":
            newlines = text.count("\n")
            if newlines:
                line += newlines
                line_start = match.start() + text.rfind("\n") + 1
        elif kind == "PRAGMA":
            head = _PRAGMA_HEAD.match(text)
            payload = text[head.end():].rstrip()
            tokens.append(
                Token(TokenKind.PRAGMA, payload, location, location.shifted(head.end()))
            )
        elif kind == "DIRECTIVE":
            raise LexError("unsupported preprocessor directive", location)
        elif kind == "OPEN_COMMENT":
            raise LexError("unterminated comment", location)
        elif kind == "OPEN_STRING":
            raise LexError("unterminated text literal", location)
        elif kind == "MISMATCH":
            raise LexError(f"illegal character '{text}'", location)
        elif kind == "ID":
            token_kind = TokenKind.KEYWORD if text in keywords else TokenKind.IDENTIFIER
            tokens.append(Token(token_kind, text, location))
        else:
            tokens.append(Token(TokenKind[kind], text, location))
    return tokens


def int_literal_value(text: str) -> int:
    digits = text.rstrip("uUlL")
    if digits.lower().startswith("0x"):
        return int(digits, 16)
    if len(digits) > 1 and digits.startswith("0"):
        return int(digits, 8)
    return int(digits)


def float_literal_value(text: str) -> float:
    return float(text.rstrip("fFlL"))
