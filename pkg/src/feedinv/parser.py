"""Recursive-descent parser for the expression grammar.

Grammar::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("+" | "-") unary | power
    power   := atom (("^" | "**") unary)?
    atom    := NUMBER | IDENT | IDENT "(" expr ")" | "(" expr ")"

Numbers are decimal literals and are kept exact (``0.25`` becomes 1/4), so
``3/4`` is an exact rational.  Identifiers are the base variables ``u``,
``y``, ``y1`` and, when allowed, jet coordinates ``f`` / ``f_<suffix>``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import sympy as sp

from .jets import BASE_SYMBOLS, MultiIndex, jet_symbol

FUNCTIONS = {
    "sin": sp.sin,
    "cos": sp.cos,
    "exp": sp.exp,
    "log": sp.log,
    "sqrt": sp.sqrt,
}

_TOKEN = re.compile(
    r"(?P<ws>\s+)"
    r"|(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),])"
)


class ParseError(ValueError):
    """Raised for malformed input; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int, text: str = ""):
        self.offset = offset
        self.text = text
        super().__init__(f"{message} at offset {offset}")


@dataclass(frozen=True)
class _Tok:
    kind: str
    value: str
    offset: int


def _tokenize(text: str) -> list[_Tok]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos), text)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Tok(kind, m.group(), _byte_offset(text, pos)))
        pos = m.end()
    tokens.append(_Tok("end", "", _byte_offset(text, len(text))))
    return tokens


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


def parse_jet_suffix(suffix: str) -> MultiIndex:
    """Read a suffix such as ``uyy1`` into a multi-index (order of letters is irrelevant)."""
    du = dy = dy1 = 0
    i = 0
    while i < len(suffix):
        if suffix[i] == "u":
            du += 1
            i += 1
        elif suffix.startswith("y1", i):
            dy1 += 1
            i += 2
        elif suffix[i] == "y":
            dy += 1
            i += 1
        else:
            raise ValueError(f"bad jet suffix {suffix!r}")
    return MultiIndex(du, dy, dy1)


class _Parser:
    def __init__(self, text: str, allow_jets: bool):
        self.text = text
        self.allow_jets = allow_jets
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.tokens[self.i]

    def advance(self) -> _Tok:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def error(self, message: str, tok: _Tok | None = None) -> ParseError:
        tok = tok or self.tok
        return ParseError(message, tok.offset, self.text)

    def expect(self, value: str) -> None:
        if self.tok.value != value or self.tok.kind not in ("op",):
            what = "end of input" if self.tok.kind == "end" else repr(self.tok.value)
            raise self.error(f"expected {value!r}, found {what}")
        self.advance()

    def parse(self) -> sp.Expr:
        e = self.expr()
        if self.tok.kind != "end":
            raise self.error(f"unexpected token {self.tok.value!r}")
        return e

    def expr(self) -> sp.Expr:
        left = self.term()
        while self.tok.kind == "op" and self.tok.value in "+-":
            op = self.advance().value
            right = self.term()
            left = left + right if op == "+" else left - right
        return left

    def term(self) -> sp.Expr:
        left = self.unary()
        while self.tok.kind == "op" and self.tok.value in ("*", "/"):
            op = self.advance().value
            right = self.unary()
            left = left * right if op == "*" else left / right
        return left

    def unary(self) -> sp.Expr:
        if self.tok.kind == "op" and self.tok.value in "+-":
            op = self.advance().value
            operand = self.unary()
            return -operand if op == "-" else operand
        return self.power()

    def power(self) -> sp.Expr:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.value in ("^", "**"):
            self.advance()
            return base ** self.unary()
        return base

    def atom(self) -> sp.Expr:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return sp.Rational(tok.value)
        if tok.kind == "ident":
            self.advance()
            if tok.value in FUNCTIONS:
                if not (self.tok.kind == "op" and self.tok.value == "("):
                    raise self.error(f"function {tok.value} needs an argument")
                self.advance()
                arg = self.expr()
                self.expect(")")
                return FUNCTIONS[tok.value](arg)
            return self.identifier(tok)
        if tok.kind == "op" and tok.value == "(":
            self.advance()
            e = self.expr()
            self.expect(")")
            return e
        what = "end of input" if tok.kind == "end" else repr(tok.value)
        raise self.error(f"unexpected {what}")

    def identifier(self, tok: _Tok) -> sp.Expr:
        name = tok.value
        if name in BASE_SYMBOLS:
            return BASE_SYMBOLS[name]
        if name == "f" or name.startswith("f_"):
            if not self.allow_jets:
                raise self.error(f"jet coordinate {name!r} not allowed here", tok)
            if name == "f":
                return jet_symbol(MultiIndex())
            try:
                return jet_symbol(parse_jet_suffix(name[2:]))
            except ValueError:
                raise self.error(f"unknown identifier {name!r}", tok) from None
        raise self.error(f"unknown identifier {name!r}", tok)


def parse_expression(text: str, allow_jets: bool = False) -> sp.Expr:
    """Parse ``text`` into an expression; raises :class:`ParseError` on bad input."""
    return _Parser(text, allow_jets).parse()
