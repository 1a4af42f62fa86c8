"""Lexer for the CPL policy language.

Tokenizes a policy source string into a flat token list.  Every byte of
the input is covered by exactly one token or by a whitespace/comment
span; tokens carry both line/column and absolute-offset locations so
diagnostics and coverage checks can point back into the source.

Lexical conventions:

* keywords ``share``, ``acquire``, ``evaluate`` and the operation
  keyword ``in`` are reserved and lowercase,
* identifiers start with a letter (ASCII or not) or ``_`` and may
  contain letters, digits, ``_`` and interior hyphens (``fine-select``),
* strings take single or double quotes, without escapes,
* an integer literal may take a ``K`` suffix meaning a factor of 1000
  (``1K`` lexes as 1000),
* comments run from ``#`` to end of line,
* whitespace is insignificant outside strings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, auto

from curie.errors import CurieError


class LexError(CurieError):
    """Raised on a character that cannot start or continue any token."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class TokenKind(Enum):
    IDENT = auto()
    STRING = auto()
    INT = auto()
    FLOAT = auto()

    SHARE = auto()
    ACQUIRE = auto()
    EVALUATE = auto()
    IN = auto()

    COLON = auto()        # :
    DCOLON = auto()       # ::
    DEFINE = auto()       # :=
    SEMI = auto()         # ;
    COMMA = auto()        # ,
    LPAREN = auto()
    RPAREN = auto()
    LBRACE = auto()
    RBRACE = auto()
    EQ = auto()           # =
    NEQ = auto()          # !=
    LT = auto()           # <
    GT = auto()           # >
    AMP = auto()          # &
    DOLLAR = auto()       # $
    EOF = auto()


KEYWORDS = {
    "share": TokenKind.SHARE,
    "acquire": TokenKind.ACQUIRE,
    "evaluate": TokenKind.EVALUATE,
    "in": TokenKind.IN,
}

_SINGLE_CHAR = {
    ";": TokenKind.SEMI,
    ",": TokenKind.COMMA,
    "(": TokenKind.LPAREN,
    ")": TokenKind.RPAREN,
    "{": TokenKind.LBRACE,
    "}": TokenKind.RBRACE,
    "=": TokenKind.EQ,
    "<": TokenKind.LT,
    ">": TokenKind.GT,
    "&": TokenKind.AMP,
    "$": TokenKind.DOLLAR,
}


@dataclass(frozen=True)
class Span:
    """Half-open source region; line/col are 1-based, offsets 0-based."""

    line: int
    col: int
    start: int
    end: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str
    span: Span = field(compare=False)
    value: object = None  # int/float for numbers, unquoted str for strings

    def __repr__(self) -> str:
        return f"Token({self.kind.name}, {self.text!r}@{self.span})"


def _is_ascii_digit(ch: str) -> bool:
    return "0" <= ch <= "9"


def _is_ident_start(ch: str) -> bool:
    return ch.isalpha() or ch == "_" or ord(ch) >= 0x80


def _is_ident_char(ch: str) -> bool:
    return ch.isalnum() or ch == "_" or ord(ch) >= 0x80


def tokenize(text: str) -> list[Token]:
    """Tokenize *text*, returning a token list ending in an EOF token.

    Raises :class:`LexError` (with location) on characters outside the
    grammar's letter/digit/operator sets in non-string context.
    """
    tokens: list[Token] = []
    pos = 0
    line = 1
    line_start = 0
    n = len(text)

    def col(p: int) -> int:
        return p - line_start + 1

    while pos < n:
        ch = text[pos]

        if ch == "\n":
            pos += 1
            line += 1
            line_start = pos
            continue
        if ch in " \t\r\f\v":
            pos += 1
            continue
        if ch == "#":
            while pos < n and text[pos] != "\n":
                pos += 1
            continue

        start = pos
        start_line, start_col = line, col(pos)

        if ch == ":":
            if text.startswith("::", pos):
                pos += 2
                kind, lex = TokenKind.DCOLON, "::"
            elif text.startswith(":=", pos):
                pos += 2
                kind, lex = TokenKind.DEFINE, ":="
            else:
                pos += 1
                kind, lex = TokenKind.COLON, ":"
            tokens.append(Token(kind, lex, Span(start_line, start_col, start, pos)))
            continue

        if ch == "!":
            if text.startswith("!=", pos):
                pos += 2
                tokens.append(Token(TokenKind.NEQ, "!=", Span(start_line, start_col, start, pos)))
                continue
            raise LexError("'!' must be followed by '='", start_line, start_col)

        if ch in _SINGLE_CHAR:
            pos += 1
            tokens.append(Token(_SINGLE_CHAR[ch], ch, Span(start_line, start_col, start, pos)))
            continue

        if ch in "'\"":
            quote = ch
            pos += 1
            while pos < n and text[pos] != quote:
                if text[pos] == "\n":
                    raise LexError("unterminated string literal", start_line, start_col)
                pos += 1
            if pos >= n:
                raise LexError("unterminated string literal", start_line, start_col)
            pos += 1
            raw = text[start:pos]
            tokens.append(
                Token(TokenKind.STRING, raw, Span(start_line, start_col, start, pos), raw[1:-1])
            )
            continue

        if _is_ascii_digit(ch) or (ch == "-" and pos + 1 < n
                                   and _is_ascii_digit(text[pos + 1])):
            pos += 1
            while pos < n and _is_ascii_digit(text[pos]):
                pos += 1
            is_float = False
            if (pos < n and text[pos] == "." and pos + 1 < n
                    and _is_ascii_digit(text[pos + 1])):
                is_float = True
                pos += 1
                while pos < n and _is_ascii_digit(text[pos]):
                    pos += 1
            elif pos < n and text[pos] == ".":
                # BNF permits a bare trailing dot in floats ("1." is 1.0)
                is_float = True
                pos += 1
            lex = text[start:pos]
            if not is_float and pos < n and text[pos] == "K":
                pos += 1
                lex = text[start:pos]
                val: object = int(lex[:-1]) * 1000
            elif is_float:
                val = float(lex)
            else:
                val = int(lex)
            tokens.append(Token(TokenKind.FLOAT if is_float else TokenKind.INT,
                                lex, Span(start_line, start_col, start, pos), val))
            continue

        if _is_ident_start(ch):
            pos += 1
            while pos < n:
                c = text[pos]
                if _is_ident_char(c):
                    pos += 1
                elif c == "-" and pos + 1 < n and _is_ident_char(text[pos + 1]):
                    pos += 2
                else:
                    break
            lex = text[start:pos]
            kind = KEYWORDS.get(lex, TokenKind.IDENT)
            tokens.append(Token(kind, lex, Span(start_line, start_col, start, pos)))
            continue

        raise LexError(f"unexpected character {ch!r}", start_line, start_col)

    tokens.append(Token(TokenKind.EOF, "", Span(line, col(pos), pos, pos)))
    return tokens
