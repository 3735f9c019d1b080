"""Token edit distance, alignment, sketch match and execution match."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Sequence

from ..formula import (
    ErrorCode, GridContext, TokenSeq, anonymize_sketch, evaluate_source, lex, normalize, parses,
)

# backtrace preference when several moves are optimal
SUB, DEL, INS = "sub", "del", "ins"


def _items(x) -> Sequence[Hashable]:
    if isinstance(x, TokenSeq):
        return x.content
    if isinstance(x, str):
        return lex(x)
    return x


def token_edit_distance(a, b) -> int:
    """Unit-cost Levenshtein distance between token sequences.

    Accepts TokenSeq (content only), formula text (lexed first) or any
    sequence of hashable tokens.
    """
    a, b = _items(a), _items(b)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


edit_distance = token_edit_distance


def _table(a, b) -> list[list[int]]:
    dp = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        dp[i][0] = i
    for j in range(len(b) + 1):
        dp[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            dp[i][j] = min(dp[i - 1][j] + 1, dp[i][j - 1] + 1, dp[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    return dp


def alignment(a, b) -> list[tuple[str, int, int]]:
    """Minimal edit script from ``a`` to ``b`` as (op, i, j) triples, in order.

    ``op`` is one of ``match``, ``sub``, ``del``, ``ins``; ``i`` indexes ``a``
    (for insertions: the position in ``a`` before which the token goes) and
    ``j`` indexes ``b``. Among optimal scripts the backtrace prefers a diagonal
    move, then a deletion, then an insertion.
    """
    a, b = _items(a), _items(b)
    dp = _table(a, b)
    i, j = len(a), len(b)
    out = []
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dp[i][j] == dp[i - 1][j - 1] + (a[i - 1] != b[j - 1]):
            out.append(("match" if a[i - 1] == b[j - 1] else SUB, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and dp[i][j] == dp[i - 1][j] + 1:
            out.append((DEL, i - 1, j))
            i -= 1
        else:
            out.append((INS, i, j - 1))
            j -= 1
    return out[::-1]


def edit_positions(a, b) -> list[int]:
    """Positions in ``a`` touched by the minimal alignment to ``b``."""
    return [i for op, i, _ in alignment(a, b) if op != "match"]


def sketch_match(candidate: str, reference: str) -> bool:
    """Exact match after normalizing spacing and anonymizing constants."""
    return anonymize_sketch(normalize(candidate)) == anonymize_sketch(normalize(reference))


def values_equal(x, y, rel_tol: float = 1e-9) -> bool:
    if isinstance(x, ErrorCode) or isinstance(y, ErrorCode):
        return False
    if isinstance(x, bool) or isinstance(y, bool):
        return type(x) is type(y) and x == y
    if isinstance(x, float) and isinstance(y, float):
        return math.isclose(x, y, rel_tol=rel_tol, abs_tol=0.0) or x == y
    return type(x) is type(y) and x == y


def execution_match(candidate: str, reference: str, grids: Sequence[GridContext]) -> bool:
    """Candidate parses and evaluates like the reference on every grid."""
    if not parses(candidate):
        return False
    grids = list(grids) or [GridContext()]
    return all(values_equal(evaluate_source(candidate, g), evaluate_source(reference, g)) for g in grids)


@dataclass
class MetricReport:
    n: int
    sketch_match: float
    execution_match: float
    per_entry: dict[str, list[bool]] = field(default_factory=dict)

    @classmethod
    def from_flags(cls, sketch: Sequence[bool], execution: Sequence[bool]) -> "MetricReport":
        if len(sketch) != len(execution):
            raise ValueError("flag vectors differ in length")
        n = len(sketch)
        return cls(
            n=n,
            sketch_match=sum(sketch) / n if n else 0.0,
            execution_match=sum(execution) / n if n else 0.0,
            per_entry={"sketch": list(map(bool, sketch)), "execution": list(map(bool, execution))},
        )

    def to_json(self) -> dict:
        return {"n": self.n, "sketch_match": self.sketch_match,
                "execution_match": self.execution_match, "per_entry": self.per_entry}


def score(candidates: Sequence[str], entries) -> MetricReport:
    """Sketch/execution match of one candidate per benchmark entry."""
    sketch, execution = [], []
    for cand, entry in zip(candidates, entries, strict=True):
        sketch.append(entry.fixed is not None and sketch_match(cand, entry.fixed))
        execution.append(entry.fixed is not None and execution_match(cand, entry.fixed, entry.grids))
    return MetricReport.from_flags(sketch, execution)
