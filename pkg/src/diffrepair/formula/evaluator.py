"""Total evaluator for parsed formulas over a small A1:H20 grid."""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from pathlib import Path
from typing import Union

from .parser import Binary, Call, Cell, Node, Number, ParseError, Range, String, Unary, parse_texts
from .tokens import TokenizeError, lex

GRID_COLUMNS = "ABCDEFGH"
GRID_ROWS = 20

_ADDRESS = re.compile(r"^([A-Z])([1-9][0-9]*)$")
_CRITERION = re.compile(r"^(>=|<=|<>|>|<|=)?(-?[0-9]+(?:\.[0-9]+)?)$")
_NUMERIC = re.compile(r"^\s*-?[0-9]+(?:\.[0-9]+)?\s*$")


class ErrorCode(Enum):
    DIV0 = "#DIV/0!"
    REF = "#REF!"
    VALUE = "#VALUE!"
    PARSE = "#PARSE!"


Value = Union[float, str, bool, None]
EvalResult = Union[float, str, bool, ErrorCode]


def in_window(address: str) -> bool:
    m = _ADDRESS.match(address)
    return bool(m) and m.group(1) in GRID_COLUMNS and int(m.group(2)) <= GRID_ROWS


@dataclass(frozen=True)
class GridContext:
    cells: dict[str, Value] = field(default_factory=dict)

    def __post_init__(self):
        for address, value in self.cells.items():
            if not in_window(address):
                raise ValueError(f"cell {address!r} outside A1:H20")
            if isinstance(value, bool) or not isinstance(value, (int, float, str, type(None))):
                raise ValueError(f"cell {address!r} has unsupported value {value!r}")

    def get(self, address: str) -> Value:
        v = self.cells.get(address)
        return float(v) if isinstance(v, int) else v

    def to_json(self) -> dict:
        return {"cells": dict(self.cells)}

    @classmethod
    def from_json(cls, obj: dict) -> "GridContext":
        if set(obj) != {"cells"}:
            raise ValueError("grid fixture must have exactly one key, 'cells'")
        return cls(dict(obj["cells"]))

    @classmethod
    def load(cls, path: str | Path) -> "GridContext":
        return cls.from_json(json.loads(Path(path).read_text()))


class _Fail(Exception):
    def __init__(self, code: ErrorCode):
        self.code = code


def format_number(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return format(x, ".15g")


def _to_number(v: Value) -> float:
    if v is None:
        return 0.0
    if isinstance(v, bool):
        return 1.0 if v else 0.0
    if isinstance(v, float):
        return v
    if _NUMERIC.match(v):
        return float(v)
    raise _Fail(ErrorCode.VALUE)


def _to_text(v: Value) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "TRUE" if v else "FALSE"
    if isinstance(v, float):
        return format_number(v)
    return v


def _to_bool(v: Value) -> bool:
    if v is None:
        return False
    if isinstance(v, bool):
        return v
    if isinstance(v, float):
        return v != 0
    raise _Fail(ErrorCode.VALUE)


def _type_rank(v: Value) -> int:
    if isinstance(v, bool):
        return 2
    if isinstance(v, str):
        return 1
    return 0


def _compare(op: str, a: Value, b: Value) -> bool:
    a = 0.0 if a is None else a
    b = 0.0 if b is None else b
    ra, rb = _type_rank(a), _type_rank(b)
    if ra != rb:
        key_a, key_b = ra, rb
    elif ra == 1:
        key_a, key_b = a.lower(), b.lower()
    else:
        key_a, key_b = a, b
    return {
        "=": key_a == key_b,
        "<>": key_a != key_b,
        ">": key_a > key_b,
        "<": key_a < key_b,
        ">=": key_a >= key_b,
        "<=": key_a <= key_b,
    }[op]


def _checked(x: float) -> float:
    if not math.isfinite(x):
        raise _Fail(ErrorCode.VALUE)
    return x


class _Evaluator:
    def __init__(self, grid: GridContext):
        self.grid = grid

    def cell(self, c: Cell) -> Value:
        if not in_window(c.address):
            raise _Fail(ErrorCode.REF)
        return self.grid.get(c.address)

    def cells(self, r: Range) -> list[Value]:
        cols = [chr(x) for x in range(ord(r.start.col), ord(r.end.col) + 1)]
        return [self.cell(Cell(col, row)) for row in range(r.start.row, r.end.row + 1) for col in cols]

    def scalar(self, node: Node) -> Value:
        if isinstance(node, Number):
            return node.value
        if isinstance(node, String):
            return node.value
        if isinstance(node, Cell):
            return self.cell(node)
        if isinstance(node, Range):
            raise _Fail(ErrorCode.VALUE)
        if isinstance(node, Unary):
            x = _to_number(self.scalar(node.operand))
            return -x if node.op == "-" else x
        if isinstance(node, Binary):
            return self.binary(node)
        return self.call(node)

    def binary(self, node: Binary) -> Value:
        a = self.scalar(node.left)
        b = self.scalar(node.right)
        if node.op == "&":
            return _to_text(a) + _to_text(b)
        if node.op in ("+", "-", "*", "/"):
            x, y = _to_number(a), _to_number(b)
            if node.op == "+":
                return _checked(x + y)
            if node.op == "-":
                return _checked(x - y)
            if node.op == "*":
                return _checked(x * y)
            if y == 0:
                raise _Fail(ErrorCode.DIV0)
            return _checked(x / y)
        return _compare(node.op, a, b)

    def numbers(self, args) -> list[float]:
        """Numeric values for aggregates: text inside ranges is skipped, scalar text must coerce."""
        out = []
        for arg in args:
            if isinstance(arg, Range):
                out.extend(v for v in self.cells(arg) if isinstance(v, float))
            elif isinstance(arg, Cell):
                v = self.cell(arg)
                if isinstance(v, float):
                    out.append(v)
            else:
                out.append(_to_number(self.scalar(arg)))
        return out

    def call(self, node: Call) -> Value:
        name, args = node.name, node.args
        if name == "SUM":
            return _checked(math.fsum(self.numbers(args)))
        if name == "AVERAGE":
            xs = self.numbers(args)
            if not xs:
                raise _Fail(ErrorCode.DIV0)
            return _checked(math.fsum(xs) / len(xs))
        if name in ("MIN", "MAX"):
            xs = self.numbers(args)
            if not xs:
                return 0.0
            return min(xs) if name == "MIN" else max(xs)
        if name == "COUNT":
            count = 0
            for arg in args:
                if isinstance(arg, Range):
                    count += sum(isinstance(v, float) for v in self.cells(arg))
                else:
                    count += isinstance(self.scalar(arg), float)
            return float(count)
        if name == "COUNTIF":
            return self.countif(args[0], args[1])
        if name == "IF":
            if _to_bool(self.scalar(args[0])):
                return self.scalar(args[1])
            return self.scalar(args[2]) if len(args) == 3 else False
        if name == "LEN":
            return float(len(_to_text(self.scalar(args[0]))))
        if name == "CONCAT":
            parts = []
            for arg in args:
                if isinstance(arg, Range):
                    parts.extend(_to_text(v) for v in self.cells(arg))
                else:
                    parts.append(_to_text(self.scalar(arg)))
            return "".join(parts)
        if name == "ABS":
            return abs(_to_number(self.scalar(args[0])))
        if name == "ROUND":
            x = _to_number(self.scalar(args[0]))
            digits = int(_to_number(self.scalar(args[1])))
            if abs(digits) > 15:
                raise _Fail(ErrorCode.VALUE)
            q = Decimal(1).scaleb(-digits)
            return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))
        raise _Fail(ErrorCode.VALUE)

    def countif(self, target: Node, criterion: Node) -> float:
        if isinstance(target, Range):
            values = self.cells(target)
        elif isinstance(target, Cell):
            values = [self.cell(target)]
        else:
            raise _Fail(ErrorCode.VALUE)
        crit = self.scalar(criterion)
        if isinstance(crit, float):
            op, threshold = "=", crit
        elif isinstance(crit, str):
            m = _CRITERION.match(crit.strip())
            if not m:
                raise _Fail(ErrorCode.VALUE)
            op, threshold = m.group(1) or "=", float(m.group(2))
        else:
            raise _Fail(ErrorCode.VALUE)
        return float(sum(isinstance(v, float) and _compare(op, v, threshold) for v in values))


def evaluate(ast: Node, grid: GridContext | None = None) -> EvalResult:
    """Evaluate ``ast`` on ``grid``; every failure becomes an :class:`ErrorCode`."""
    try:
        value = _Evaluator(grid or GridContext()).scalar(ast)
    except _Fail as e:
        return e.code
    except (ArithmeticError, ValueError, RecursionError):
        return ErrorCode.VALUE
    return 0.0 if value is None else value


def evaluate_source(source: str, grid: GridContext | None = None) -> EvalResult:
    try:
        ast = parse_texts(lex(source))
    except (TokenizeError, ParseError):
        return ErrorCode.PARSE
    return evaluate(ast, grid)
