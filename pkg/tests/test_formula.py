import json

import pytest
from hypothesis import given, settings, strategies as st

from diffrepair.formula import (
    EOS_ID, PAD_ID, ErrorCode, GridContext, ParseError, TokenSeq, TooLong, UnknownCharacter,
    anonymize_sketch, detokenize, evaluate, evaluate_source, lex, normalize, parse, parse_texts,
    parses, sample_formula, tokenize,
)
from diffrepair.formula.parser import Call, Range
from diffrepair.formula.tokens import VOCAB, token_kind


def oracle_valid(texts):
    """Independent recursive recognizer written against the grammar, no AST."""
    toks = list(texts)
    funcs = {"SUM": (1, 99), "AVERAGE": (1, 99), "MIN": (1, 99), "MAX": (1, 99),
             "COUNT": (1, 99), "COUNTIF": (2, 2), "IF": (2, 3), "LEN": (1, 1),
             "CONCAT": (1, 99), "ABS": (1, 1), "ROUND": (2, 2)}

    def at(i):
        return toks[i] if i < len(toks) else None

    def cell(i):
        if at(i) and len(at(i)) == 1 and at(i).isupper():
            j = i + 1
            while at(j) and at(j).isdigit():
                j += 1
            if j > i + 1 and int("".join(toks[i + 1:j])) > 0:
                return j
        return None

    def primary(i):
        t = at(i)
        if t is None:
            return None
        if t.isdigit():
            j = i
            while at(j) and at(j).isdigit():
                j += 1
            if at(j) == ".":
                k = j + 1
                while at(k) and at(k).isdigit():
                    k += 1
                return k if k > j + 1 else None
            return j
        if t == '"':
            j = i + 1
            while at(j) is not None and at(j) != '"':
                j += 1
            return j + 1 if at(j) == '"' else None
        if t in funcs:
            if at(i + 1) != "(":
                return None
            j, count = i + 2, 0
            while True:
                c = cell(j)
                if c is not None and at(c) == ":":
                    c2 = cell(c + 1)
                    if c2 is None:
                        return None
                    a_col, b_col = toks[j], toks[c + 1]
                    a_row = int("".join(toks[j + 1:c]))
                    b_row = int("".join(toks[c + 2:c2]))
                    if a_col > b_col or a_row > b_row:
                        return None
                    j = c2
                else:
                    j = expr(j)
                    if j is None:
                        return None
                count += 1
                if at(j) == ",":
                    j += 1
                    continue
                if at(j) == ")":
                    lo, hi = funcs[t]
                    return j + 1 if lo <= count <= hi else None
                return None
        if t == "(":
            j = expr(i + 1)
            return j + 1 if j is not None and at(j) == ")" else None
        return cell(i)

    def unary(i):
        while at(i) in ("+", "-"):
            i += 1
        return primary(i)

    def expr(i):
        j = unary(i)
        while j is not None and at(j) in ("+", "-", "*", "/", "&", "=", ">", "<", ">=", "<=", "<>"):
            j = unary(j + 1)
        return j

    if at(0) != "=":
        return False
    end = expr(1)
    return end == len(toks)


class TestTokenize:
    def test_sum_range(self):
        seq = tokenize("=SUM(A1:B2)")
        assert seq.texts == ["=", "SUM", "(", "A", "1", ":", "B", "2", ")"]
        assert seq.ids[9] == EOS_ID and all(i == PAD_ID for i in seq.ids[10:])

    def test_empty(self):
        seq = tokenize("")
        assert seq.k == 0 and seq.ids[0] == EOS_ID

    def test_if_example_counts_and_round_trips(self):
        src = '=IF(A1>10, "yes", 0)'
        seq = tokenize(src)
        assert seq.k == 17
        assert detokenize(seq) == normalize(src) == src

    def test_whitespace_normalized(self):
        assert normalize('= SUM( A1 ,B2 )') == "=SUM(A1, B2)"
        assert normalize('=CONCAT("a b",  "c")') == '=CONCAT("a b", "c")'

    def test_errors(self):
        with pytest.raises(UnknownCharacter):
            tokenize("=SUM(A1)!")
        with pytest.raises(TooLong):
            tokenize("=" + "1+" * 30 + "1")

    def test_detokenize_examples(self):
        assert detokenize(TokenSeq.from_texts(["=", "SUM", "(", "A", "1", ")"])) == "=SUM(A1)"
        assert detokenize(tokenize("")) == ""

    def test_token_kinds(self):
        kinds = {t.kind for t in tokenize('=IF(A1>=1.5, "x", SUM(B2))').tokens}
        assert {"FUNC", "CELL_COL", "DIGIT", "OP", "PUNCT", "QUOTE", "CHAR", "EOS", "PAD"} == kinds
        assert all(t for t in VOCAB if token_kind(t) not in ("EOS", "PAD"))

    def test_tokenseq_invariants(self):
        with pytest.raises(ValueError):
            TokenSeq((5, PAD_ID, EOS_ID))
        with pytest.raises(ValueError):
            TokenSeq((5, EOS_ID, 5))

    def test_from_argmax_forces_eos(self):
        seq = TokenSeq.from_argmax([5, 6, 7, 8])
        assert seq.content == (5, 6, 7) and seq.ids[-1] == EOS_ID
        assert TokenSeq.from_argmax([EOS_ID, 5, 6]).k == 0
        assert TokenSeq.from_argmax([5, PAD_ID, 6, EOS_ID]).content == (5,)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32), st.integers(1, 3))
    def test_round_trip_over_sampled_corpus(self, seed, depth):
        src = sample_formula(seed, depth)
        assert detokenize(tokenize(src)) == normalize(src)
        assert normalize(normalize(src)) == normalize(src)


class TestParse:
    def test_valid_call(self):
        ast = parse(tokenize("=SUM(A1:B2)"))
        assert isinstance(ast, Call) and ast.name == "SUM" and isinstance(ast.args[0], Range)

    def test_unclosed_paren_reports_eos(self):
        seq = tokenize("=SUM(A1:B2")
        with pytest.raises(ParseError) as err:
            parse(seq)
        assert err.value.index == seq.k

    def test_nested_if(self):
        src = '=IF(COUNTIF(A1:A9,">10")=0,"No",AVERAGE(A1:A9))'
        assert oracle_valid(lex(src))
        parse(tokenize(src))

    @pytest.mark.parametrize("src", [
        "=SUM()", "=ROUND(1)", "=IF(1)", "=ABS(1, 2)", "=SUM(B2:A1)", "=A0", "=1+", "=(1",
        "SUM(1)", '=LEN("abc)', "=SUM(A1:B2+1)", "=A1:B2", "=1.", "=SU(A1)",
    ])
    def test_rejects(self, src):
        assert not parses(src)
        assert not oracle_valid(lex(src))

    @pytest.mark.parametrize("src", [
        "=1", "=-A1", "=A1&B2", "=1+2*3-4/5", '=CONCAT("a", 1, A1:B2)', "=IF(A1>1, 2)",
        "=(1+2)*3", "=1<2=TRUE" if False else "=1<2", "=ROUND(A1, -1)",
    ])
    def test_accepts(self, src):
        assert parses(src)
        assert oracle_valid(lex(src))

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.sampled_from(["=", "SUM", "IF", "(", ")", ",", "A", "1", "2", ":", "+", '"', "x", "ROUND"]),
                    max_size=12))
    def test_agrees_with_oracle_on_random_token_strings(self, texts):
        try:
            parse_texts(texts)
            ok = True
        except ParseError:
            ok = False
        assert ok == oracle_valid(texts)


class TestEvaluate:
    def test_examples(self):
        assert evaluate_source("=SUM(1,2)") == 3.0
        assert evaluate_source("=1/0") is ErrorCode.DIV0
        assert evaluate_source('=IF(A1>10,"big","small")', GridContext({"A1": 12})) == "big"
        assert evaluate_source('=IF(A1>10,"big","small")', GridContext({"A1": 2})) == "small"

    def test_functions(self):
        g = GridContext({"A1": 5, "A2": 15, "A3": "x", "B1": -2.5})
        assert evaluate_source("=AVERAGE(A1:A3)", g) == 10.0
        assert evaluate_source('=COUNTIF(A1:A3, ">10")', g) == 1.0
        assert evaluate_source("=COUNTIF(A1:A3, 5)", g) == 1.0
        assert evaluate_source('=COUNTIF(A1:A3, "abc")', g) is ErrorCode.VALUE
        assert evaluate_source("=COUNT(A1:B3)", g) == 3.0
        assert evaluate_source("=MIN(A1:B1)", g) == -2.5
        assert evaluate_source("=MAX(A1:A3, 100)", g) == 100.0
        assert evaluate_source("=ABS(B1)", g) == 2.5
        assert evaluate_source("=ROUND(2.5, 0)", g) == 3.0
        assert evaluate_source("=ROUND(-2.345, 2)", g) == -2.35
        assert evaluate_source('=LEN("abc")', g) == 3.0
        assert evaluate_source('=CONCAT("n", A1, A3)', g) == "n5x"
        assert evaluate_source("=A1&A2", g) == "515"
        assert evaluate_source("=A3+1", g) is ErrorCode.VALUE
        assert evaluate_source("=Z1", g) is ErrorCode.REF
        assert evaluate_source("=A21", g) is ErrorCode.REF
        assert evaluate_source("=AVERAGE(C1:C3)", g) is ErrorCode.DIV0
        assert evaluate_source("=IF(0, 1)", g) is False
        assert evaluate_source("=1+", g) is ErrorCode.PARSE
        assert evaluate_source("=C5", g) == 0.0

    def test_grid_window_enforced(self):
        with pytest.raises(ValueError):
            GridContext({"I1": 3})
        with pytest.raises(ValueError):
            GridContext({"A21": 3})

    def test_grid_fixture_json(self, tmp_path):
        path = tmp_path / "grid.json"
        path.write_text(json.dumps({"cells": {"A1": 12, "B2": "x"}}))
        g = GridContext.load(path)
        assert evaluate_source("=A1", g) == 12.0 and evaluate_source("=B2", g) == "x"

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 2**32), st.integers(1, 3),
           st.dictionaries(st.sampled_from([f"{c}{r}" for c in "ABCDEFGH" for r in range(1, 21)]),
                           st.one_of(st.integers(-100, 100), st.floats(-1e6, 1e6), st.text("abc<>=1 ", max_size=4)),
                           max_size=20))
    def test_total_and_sound(self, seed, depth, cells):
        ast = parse(tokenize(sample_formula(seed, depth)))
        result = evaluate(ast, GridContext(cells))
        assert result is not ErrorCode.PARSE
        assert isinstance(result, (float, str, bool, ErrorCode))


class TestSketch:
    def test_examples(self):
        assert anonymize_sketch("=SUM(A1:B2, 10)") == "=SUM(<cell>:<cell>, <num>)"
        assert anonymize_sketch('=IF(A1>10,"yes",0)') == "=IF(<cell>><num>,<str>,<num>)"

    def test_token_seq_input(self):
        assert anonymize_sketch(tokenize("=ROUND(B3, 2.5)")) == "=ROUND(<cell>, <num>)"

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32))
    def test_idempotent(self, seed):
        once = anonymize_sketch(sample_formula(seed, 3))
        assert anonymize_sketch(once) == once


class TestSampler:
    def test_depth_one_is_flat(self):
        src = sample_formula(7, 1)
        ast = parse(tokenize(src))
        assert sample_formula(7, 1) == src

        def calls(node):
            children = getattr(node, "args", ()) + tuple(
                getattr(node, k) for k in ("left", "right", "operand") if hasattr(node, k))
            return isinstance(node, Call) + max((calls(c) for c in children), default=0)

        assert calls(ast) <= 1

    def test_rejects_depth_zero(self):
        with pytest.raises(ValueError):
            sample_formula(0, 0)

    def test_ten_thousand_samples_parse(self):
        assert all(parses(sample_formula(s, 3)) for s in range(10_000))
