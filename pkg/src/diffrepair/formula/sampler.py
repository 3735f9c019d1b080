"""Weighted random grammar for synthetic formula corpora."""
from __future__ import annotations

import random
from dataclasses import dataclass, field

from .parser import parse_texts
from .tokens import DEFAULT_N, lex

WORDS = ("yes", "no", "ok", "big", "small", "high", "low", "pass", "fail", "done", "n_a", "x")


@dataclass(frozen=True)
class SamplerWeights:
    # relative weight per builtin when a call is produced
    functions: dict[str, float] = field(default_factory=lambda: {
        "SUM": 4.0, "AVERAGE": 2.0, "MIN": 1.5, "MAX": 1.5, "COUNT": 1.0,
        "COUNTIF": 1.5, "IF": 3.0, "LEN": 0.7, "CONCAT": 0.8, "ABS": 0.8, "ROUND": 1.2,
    })
    top_call: float = 0.85        # P(top-level expression is a call)
    nest: float = 0.5             # P(argument is a nested call) at depth 1
    decay: float = 0.5            # nest probability multiplier per level
    binary: float = 0.2           # P(argument is a binary arithmetic expression)
    range_arg: float = 0.6        # P(aggregate argument is a range)
    cell_leaf: float = 0.55       # P(leaf is a cell rather than a number)


DEFAULT_WEIGHTS = SamplerWeights()


class _Grammar:
    def __init__(self, rng: random.Random, max_depth: int, w: SamplerWeights):
        self.rng = rng
        self.max_depth = max_depth
        self.w = w

    def chance(self, p: float) -> bool:
        return self.rng.random() < p

    def column(self, hi: str = "H") -> str:
        return self.rng.choice("ABCDEFGH"[: "ABCDEFGH".index(hi) + 1])

    def cell(self) -> str:
        return f"{self.column()}{self.rng.randint(1, 20)}"

    def range(self) -> str:
        c1 = self.rng.randrange(8)
        c2 = min(7, c1 + self.rng.choice((0, 0, 0, 1, 2)))
        r1 = self.rng.randint(1, 19)
        r2 = min(20, r1 + self.rng.randint(1, 9))
        return f"{'ABCDEFGH'[c1]}{r1}:{'ABCDEFGH'[c2]}{r2}"

    def number(self) -> str:
        r = self.rng.random()
        if r < 0.75:
            return str(self.rng.randint(0, 100))
        if r < 0.9:
            return str(self.rng.randint(1, 9))
        return f"{self.rng.randint(0, 20)}.{self.rng.randint(1, 9)}"

    def string(self) -> str:
        return f'"{self.rng.choice(WORDS)}"'

    def leaf(self) -> str:
        return self.cell() if self.chance(self.w.cell_leaf) else self.number()

    def nest_p(self, depth: int) -> float:
        if depth >= self.max_depth:
            return 0.0
        return self.w.nest * self.w.decay ** (depth - 1)

    def operand(self, depth: int) -> str:
        """A numeric expression: nested call, binary arithmetic, or leaf."""
        if self.chance(self.nest_p(depth)):
            return self.call(depth + 1, numeric=True)
        if self.chance(self.w.binary):
            op = self.rng.choice("+-*/")
            return f"{self.leaf()}{op}{self.leaf()}"
        return self.leaf()

    def value(self, depth: int) -> str:
        """IF branch / CONCAT part: text or numeric."""
        if self.chance(0.35):
            return self.string()
        return self.operand(depth)

    def call(self, depth: int, numeric: bool = False) -> str:
        names = list(self.w.functions)
        weights = [self.w.functions[n] for n in names]
        if numeric:
            weights = [0.0 if n == "CONCAT" else wt for n, wt in zip(names, weights)]
        name = self.rng.choices(names, weights)[0]
        if name in ("SUM", "AVERAGE", "MIN", "MAX", "COUNT"):
            nargs = self.rng.choices((1, 2, 3), (0.6, 0.3, 0.1))[0]
            args = [self.range() if self.chance(self.w.range_arg) else self.operand(depth)
                    for _ in range(nargs)]
        elif name == "COUNTIF":
            op = self.rng.choice((">", "<", ">=", "<=", "=", "<>"))
            args = [self.range(), f'"{op}{self.rng.randint(0, 50)}"']
        elif name == "IF":
            cmp = self.rng.choice((">", "<", ">=", "<=", "=", "<>"))
            cond = f"{self.operand(depth)}{cmp}{self.operand(depth)}"
            if numeric:
                args = [cond, self.operand(depth), self.operand(depth)]
            else:
                args = [cond, self.value(depth)]
                if self.chance(0.8):
                    args.append(self.value(depth))
        elif name == "LEN":
            args = [self.string() if self.chance(0.3) else self.cell()]
        elif name == "CONCAT":
            args = [self.value(depth) for _ in range(self.rng.choice((2, 2, 3)))]
        elif name == "ABS":
            args = [self.operand(depth)]
        else:
            args = [self.operand(depth), str(self.rng.randint(0, 2))]
        return f"{name}({', '.join(args)})"

    def formula(self) -> str:
        if self.chance(self.w.top_call):
            return "=" + self.call(1)
        op = self.rng.choice("+-*/")
        return f"={self.operand(1)}{op}{self.operand(1)}"


def sample_formula(rng_seed: int, max_depth: int, weights: SamplerWeights = DEFAULT_WEIGHTS,
                   n: int = DEFAULT_N) -> str:
    """Draw one formula that tokenizes into at most ``n - 1`` tokens and parses."""
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    rng = random.Random(rng_seed)
    grammar = _Grammar(rng, max_depth, weights)
    while True:
        text = grammar.formula()
        texts = lex(text)
        if len(texts) <= n - 1:
            parse_texts(texts)
            return text
