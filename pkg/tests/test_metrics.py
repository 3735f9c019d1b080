import math

import pytest
from hypothesis import given, settings, strategies as st

from diffrepair.corpus import BenchmarkEntry
from diffrepair.evaluation import (
    alignment, edit_positions, execution_match, score, sketch_match, token_edit_distance, values_equal,
)
from diffrepair.formula import ErrorCode, GridContext, tokenize


def brute_distance(a, b):
    """Shortest edit script by breadth-first search over all strings."""
    alphabet = set(a) | set(b)
    frontier, seen, d = {tuple(a)}, {tuple(a)}, 0
    target = tuple(b)
    limit = max(len(a), len(b)) + 1
    while target not in frontier:
        nxt = set()
        for s in frontier:
            for i in range(len(s) + 1):
                if len(s) < limit:
                    for c in alphabet:
                        nxt.add(s[:i] + (c,) + s[i:])
                if i < len(s):
                    nxt.add(s[:i] + s[i + 1:])
                    for c in alphabet:
                        nxt.add(s[:i] + (c,) + s[i + 1:])
        frontier = nxt - seen
        seen |= nxt
        d += 1
    return d


def apply_script(a, b, script):
    out = []
    for op, i, j in script:
        if op in ("match", "sub", "ins"):
            out.append(b[j])
    return out


short = st.lists(st.sampled_from("xyz"), max_size=6)


@settings(max_examples=150, deadline=None)
@given(short, short)
def test_edit_distance_matches_brute_force(a, b):
    assert token_edit_distance(a, b) == brute_distance(a, b)


@settings(max_examples=200, deadline=None)
@given(short, short, short)
def test_metric_axioms(a, b, c):
    d = token_edit_distance
    assert d(a, a) == 0
    assert d(a, b) == d(b, a)
    assert d(a, c) <= d(a, b) + d(b, c)
    assert abs(len(a) - len(b)) <= d(a, b) <= max(len(a), len(b))


@settings(max_examples=200, deadline=None)
@given(short, short)
def test_alignment_is_minimal_and_consistent(a, b):
    script = alignment(a, b)
    assert sum(op != "match" for op, _, _ in script) == token_edit_distance(a, b)
    assert apply_script(a, b, script) == list(b)
    assert [i for op, i, _ in script if op in ("match", "sub", "del")] == list(range(len(a)))
    assert all(0 <= p <= len(a) for p in edit_positions(a, b))


def test_alignment_tie_break():
    # both a substitution and a delete+insert are optimal for length-1 edits; the diagonal wins
    assert alignment(["a"], ["b"]) == [("sub", 0, 0)]
    assert alignment(["a", "b"], ["b"]) == [("del", 0, 0), ("match", 1, 0)]
    assert alignment([], ["q"]) == [("ins", 0, 0)]


def test_distance_accepts_formula_forms():
    assert token_edit_distance("=SUM(A1)", "=SUM(A1") == 1
    assert token_edit_distance(tokenize("=SUM(A1)"), tokenize("=SUM(A1")) == 1
    assert token_edit_distance("=AVERAGE(A1)", "=SUM(A1)") == 1


def test_sketch_match():
    assert sketch_match("=SUM(A1:B2, 10)", "=SUM(C3:D4,7)")
    assert not sketch_match("=SUM(A1)", "=MAX(A1)")
    assert sketch_match('=IF(A1>1,"x",2)', '=IF(B2>3, "yy", 5)')


def test_values_equal():
    assert values_equal(1.0, 1.0 + 1e-12)
    assert not values_equal(1.0, 1.001)
    assert not values_equal(True, 1.0)
    assert not values_equal("1", 1.0)
    assert not values_equal(ErrorCode.DIV0, ErrorCode.DIV0)
    assert values_equal(math.inf, math.inf)


def test_execution_match():
    grids = [GridContext({"A1": 3, "A2": 4}), GridContext({"A1": 10, "A2": 1})]
    assert execution_match("=A1+A2", "=SUM(A1:A2)", grids)
    assert not execution_match("=A1*A2", "=SUM(A1:A2)", grids)
    assert not execution_match("=SUM(A1:A2", "=SUM(A1:A2)", grids)
    assert not execution_match("=1/0", "=1/0", grids)


def test_score():
    grid = (GridContext({"A1": 2}),)
    entries = [BenchmarkEntry("=ABS(A1", "=ABS(A1)", grid), BenchmarkEntry("=A1+", "=A1+1", grid)]
    report = score(["=ABS(A1)", "=A1+2"], entries)
    assert report.n == 2
    assert report.execution_match == 0.5 and report.sketch_match == 1.0
    assert report.to_json()["per_entry"]["execution"] == [True, False]
    with pytest.raises(ValueError):
        score(["=1"], entries)
