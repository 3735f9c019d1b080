"""Recursive-descent parser over token texts.

Grammar (``cmp`` chains left-associatively, ranges only as call arguments)::

    formula  := '=' expr EOS
    expr     := concat (CMP concat)*
    concat   := additive ('&' additive)*
    additive := term (('+' | '-') term)*
    term     := unary (('*' | '/') unary)*
    unary    := ('+' | '-') unary | primary
    primary  := number | string | cell | FUNC '(' args ')' | '(' expr ')'
    args     := arg (',' arg)*
    arg      := cell ':' cell | expr
"""
from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Union

from .tokens import EOS, FUNCTIONS, QUOTE, TokenSeq

# name -> (min args, max args or None)
ARITY: dict[str, tuple[int, int | None]] = {
    "SUM": (1, None),
    "AVERAGE": (1, None),
    "MIN": (1, None),
    "MAX": (1, None),
    "COUNT": (1, None),
    "COUNTIF": (2, 2),
    "IF": (2, 3),
    "LEN": (1, 1),
    "CONCAT": (1, None),
    "ABS": (1, 1),
    "ROUND": (2, 2),
}
assert set(ARITY) == set(FUNCTIONS)

COMPARISONS = ("=", ">", "<", ">=", "<=", "<>")
DIGITS = frozenset(string.digits)
COLUMNS = frozenset(string.ascii_uppercase)


@dataclass(frozen=True)
class Number:
    value: float


@dataclass(frozen=True)
class String:
    value: str


@dataclass(frozen=True)
class Cell:
    col: str
    row: int

    @property
    def address(self) -> str:
        return f"{self.col}{self.row}"


@dataclass(frozen=True)
class Range:
    start: Cell
    end: Cell


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Node"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple["Node", ...]


Node = Union[Number, String, Cell, Range, Unary, Binary, Call]


class ParseError(ValueError):
    def __init__(self, index: int, message: str):
        super().__init__(f"token {index}: {message}")
        self.index = index


class _Parser:
    def __init__(self, texts: list[str]):
        self.toks = texts + [EOS]
        self.pos = 0

    def peek(self, offset: int = 0) -> str:
        i = min(self.pos + offset, len(self.toks) - 1)
        return self.toks[i]

    def take(self) -> str:
        tok = self.toks[self.pos]
        if tok != EOS:
            self.pos += 1
        return tok

    def expect(self, text: str) -> None:
        if self.peek() != text:
            raise ParseError(self.pos, f"expected {text!r}, got {self.peek()!r}")
        self.take()

    def formula(self) -> Node:
        self.expect("=")
        node = self.expr()
        if self.peek() != EOS:
            raise ParseError(self.pos, f"unexpected {self.peek()!r}")
        return node

    def expr(self) -> Node:
        node = self.concat()
        while self.peek() in COMPARISONS:
            op = self.take()
            node = Binary(op, node, self.concat())
        return node

    def concat(self) -> Node:
        node = self.additive()
        while self.peek() == "&":
            self.take()
            node = Binary("&", node, self.additive())
        return node

    def additive(self) -> Node:
        node = self.term()
        while self.peek() in ("+", "-"):
            op = self.take()
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek() in ("*", "/"):
            op = self.take()
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek() in ("+", "-"):
            op = self.take()
            return Unary(op, self.unary())
        return self.primary()

    def primary(self) -> Node:
        tok = self.peek()
        if tok in DIGITS:
            return self.number()
        if tok == QUOTE:
            return self.string()
        if tok in FUNCTIONS:
            return self.call()
        if tok in COLUMNS:
            return self.cell()
        if tok == "(":
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        raise ParseError(self.pos, f"unexpected {tok!r}")

    def digits(self) -> str:
        out = []
        while self.peek() in DIGITS:
            out.append(self.take())
        return "".join(out)

    def number(self) -> Number:
        text = self.digits()
        if self.peek() == ".":
            self.take()
            frac = self.digits()
            if not frac:
                raise ParseError(self.pos, "expected digits after '.'")
            text += "." + frac
        return Number(float(text))

    def string(self) -> String:
        self.expect(QUOTE)
        chars = []
        while self.peek() != QUOTE:
            if self.peek() == EOS:
                raise ParseError(self.pos, "unterminated string")
            chars.append(self.take())
        self.take()
        return String("".join(chars))

    def cell(self) -> Cell:
        col = self.take()
        start = self.pos
        row = self.digits()
        if not row:
            raise ParseError(self.pos, f"expected row after column {col!r}")
        if int(row) == 0:
            raise ParseError(start, "row 0 does not exist")
        return Cell(col, int(row))

    def call(self) -> Call:
        start = self.pos
        name = self.take()
        self.expect("(")
        args = [self.arg()]
        while self.peek() == ",":
            self.take()
            args.append(self.arg())
        self.expect(")")
        lo, hi = ARITY[name]
        if len(args) < lo or (hi is not None and len(args) > hi):
            raise ParseError(start, f"{name} takes {lo}..{hi or 'n'} arguments, got {len(args)}")
        return Call(name, tuple(args))

    def arg(self) -> Node:
        tok = self.peek()
        if tok in COLUMNS:
            save = self.pos
            first = self.cell()
            if self.peek() == ":":
                at = self.pos
                self.take()
                if self.peek() not in COLUMNS:
                    raise ParseError(self.pos, "expected cell after ':'")
                last = self.cell()
                if first.col > last.col or first.row > last.row:
                    raise ParseError(at, "range start after range end")
                return Range(first, last)
            self.pos = save
        return self.expr()


def parse_texts(texts: list[str]) -> Node:
    return _Parser(list(texts)).formula()


def parse(seq: TokenSeq) -> Node:
    return parse_texts(seq.texts)
