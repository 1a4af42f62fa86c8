"""CPL policy language: lexer, parser, validator, serializer."""

from curie.cpl.ast import (
    Algorithm,
    Attribute,
    Clause,
    ClauseKind,
    Comparison,
    Diagnostic,
    Evaluate,
    Filter,
    Filters,
    MemberRef,
    PolicyAst,
    Severity,
    SizeOfData,
    TagRef,
    Value,
    VarRef,
)
from curie.cpl.parser import LexError, ParseError, parse_policy
from curie.cpl.serializer import serialize
from curie.cpl.tokens import Span, Token, TokenKind, tokenize
from curie.cpl.validator import has_errors, validate

__all__ = [
    "Algorithm", "Attribute", "Clause", "ClauseKind", "Comparison",
    "Diagnostic", "Evaluate", "Filter", "Filters", "MemberRef",
    "PolicyAst", "Severity", "SizeOfData", "TagRef", "Value", "VarRef",
    "LexError", "ParseError", "parse_policy", "serialize",
    "Span", "Token", "TokenKind", "tokenize", "validate", "has_errors",
]
