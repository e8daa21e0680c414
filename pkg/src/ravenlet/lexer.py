"""Tokenizer shared by the query frontend and the SQL expression parser."""
from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ParseError

KEYWORDS = {
    "SELECT", "FROM", "WHERE", "AND", "OR", "NOT", "JOIN", "INNER", "LEFT", "RIGHT",
    "FULL", "OUTER", "CROSS", "ON", "AS", "PREDICT", "WITH", "CASE", "WHEN", "THEN",
    "ELSE", "END", "UNION", "GROUP", "ORDER", "BY", "HAVING", "LIMIT", "IN", "IS",
    "NULL", "LIKE", "BETWEEN", "EXISTS", "DISTINCT",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+|--[^\n]*)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<string>'(?:[^']|'')*')
  | (?P<qident>"(?:[^"]|"")+")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><>|!=|<=|>=|=|<|>|\+|-|\*|/)
  | (?P<punct>[(),.;\[\]])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # KEYWORD, IDENT, NUMBER, STRING, OP, PUNCT, EOF
    value: str
    line: int
    col: int

    def is_kw(self, *names):
        return self.kind == "KEYWORD" and self.value in names

    def is_punct(self, *chars):
        return self.kind == "PUNCT" and self.value in chars

    def is_op(self, *ops):
        return self.kind == "OP" and self.value in ops


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        raw = m.group()
        col = pos - line_start + 1
        if kind == "ident":
            up = raw.upper()
            if up in KEYWORDS:
                tokens.append(Token("KEYWORD", up, line, col))
            else:
                tokens.append(Token("IDENT", raw, line, col))
        elif kind == "qident":
            tokens.append(Token("IDENT", raw[1:-1].replace('""', '"'), line, col))
        elif kind == "string":
            tokens.append(Token("STRING", raw[1:-1].replace("''", "'"), line, col))
        elif kind == "number":
            tokens.append(Token("NUMBER", raw, line, col))
        elif kind == "op":
            tokens.append(Token("OP", raw, line, col))
        elif kind == "punct":
            tokens.append(Token("PUNCT", raw, line, col))
        newlines = raw.count("\n")
        if newlines:
            line += newlines
            line_start = pos + raw.rfind("\n") + 1
        pos = m.end()
    tokens.append(Token("EOF", "", line, pos - line_start + 1))
    return tokens


class TokenStream:
    def __init__(self, text):
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def cur(self) -> Token:
        return self.tokens[self.i]

    def peek(self, k=1) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def advance(self) -> Token:
        tok = self.tokens[self.i]
        if tok.kind != "EOF":
            self.i += 1
        return tok

    def error(self, msg, tok=None):
        tok = tok or self.cur
        return ParseError(msg, tok.line, tok.col)

    def expect_kw(self, name):
        if not self.cur.is_kw(name):
            raise self.error(f"expected {name}, found {self.cur.value or 'end of input'!r}")
        return self.advance()

    def expect_punct(self, ch):
        if not self.cur.is_punct(ch):
            raise self.error(f"expected {ch!r}, found {self.cur.value or 'end of input'!r}")
        return self.advance()

    def expect_ident(self, what="identifier"):
        if self.cur.kind != "IDENT":
            raise self.error(f"expected {what}, found {self.cur.value or 'end of input'!r}")
        return self.advance()

    def accept_kw(self, *names):
        if self.cur.is_kw(*names):
            return self.advance()
        return None

    def accept_punct(self, ch):
        if self.cur.is_punct(ch):
            return self.advance()
        return None
