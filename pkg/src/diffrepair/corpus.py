"""Formula corpora, train/dev/bench splits, syntactic corruption and benchmarks."""
from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from .evaluation.metrics import token_edit_distance
from .formula import (
    DEFAULT_N, ErrorCode, GridContext, TokenizeError, evaluate_source, lex, parses, sample_formula,
)
from .formula.evaluator import GRID_COLUMNS, GRID_ROWS
from .formula.tokens import FUNCTIONS, QUOTE, join_texts

SPLIT_FRACTIONS = (90, 5, 5)


def split_of(entry_id: str) -> str:
    bucket = int(hashlib.sha256(entry_id.encode()).hexdigest(), 16) % 100
    if bucket < SPLIT_FRACTIONS[0]:
        return "train"
    if bucket < SPLIT_FRACTIONS[0] + SPLIT_FRACTIONS[1]:
        return "dev"
    return "bench"


def entry_id(code: str) -> str:
    return "f" + hashlib.sha1(code.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class CorpusEntry:
    id: str
    code: str

    @property
    def split(self) -> str:
        return split_of(self.id)


def build_corpus(n_samples: int, seed: int, depth: int = 3, n: int = DEFAULT_N) -> list[CorpusEntry]:
    """``n_samples`` unique parse-valid formulas, sorted by id."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = random.Random(seed)
    seen: dict[str, CorpusEntry] = {}
    while len(seen) < n_samples:
        code = sample_formula(rng.getrandbits(63), depth, n=n)
        if code not in seen:
            seen[code] = CorpusEntry(entry_id(code), code)
    return sorted(seen.values(), key=lambda e: e.id)


def select_split(corpus: Iterable[CorpusEntry], split: str) -> list[CorpusEntry]:
    return [e for e in corpus if e.split == split]


def write_corpus(entries: Iterable[CorpusEntry], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in entries:
            f.write(json.dumps({"id": e.id, "code": e.code}, ensure_ascii=False) + "\n")


def read_corpus(path: str | Path) -> list[CorpusEntry]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if not isinstance(rec.get("id"), str) or not isinstance(rec.get("code"), str):
                raise ValueError(f"{path}:{lineno}: corpus records need string 'id' and 'code'")
            out.append(CorpusEntry(rec["id"], rec["code"]))
    return out


# ---------------------------------------------------------------------------
# corruption operators

class CannotCorrupt(ValueError):
    pass


def _parens(texts: Sequence[str]) -> list[int]:
    return [i for i, t in enumerate(texts) if t in ("(", ")")]


def _argument_spans(texts: Sequence[str]) -> list[tuple[int, int, Optional[int]]]:
    """(start, end, comma index to drop with it) for every call argument."""
    spans = []
    for open_i, tok in enumerate(texts):
        if tok != "(" or open_i == 0 or texts[open_i - 1] not in FUNCTIONS:
            continue
        depth, start, commas, bounds = 0, open_i + 1, [], []
        in_string = False
        for j in range(open_i + 1, len(texts)):
            t = texts[j]
            if t == QUOTE:
                in_string = not in_string
            if in_string or t == QUOTE:
                continue
            if t == "(":
                depth += 1
            elif t == ")" and depth > 0:
                depth -= 1
            elif depth == 0 and t in (",", ")"):
                bounds.append((start, j))
                if t == ")":
                    break
                commas.append(j)
                start = j + 1
        for idx, (s, e) in enumerate(bounds):
            if idx > 0:
                comma = commas[idx - 1]
            elif idx < len(commas):
                comma = commas[idx]
            else:
                comma = None
            spans.append((s, e, comma))
    return spans


def _delete_token(texts, rng):
    if not texts:
        return None
    i = rng.randrange(len(texts))
    return texts[:i] + texts[i + 1:]


def _duplicate_token(texts, rng):
    if not texts:
        return None
    i = rng.randrange(len(texts))
    return texts[:i + 1] + texts[i:]


def _swap_adjacent(texts, rng):
    pairs = [i for i in range(len(texts) - 1) if texts[i] != texts[i + 1]]
    if not pairs:
        return None
    i = rng.choice(pairs)
    out = list(texts)
    out[i], out[i + 1] = out[i + 1], out[i]
    return out


def _drop_paren(texts, rng):
    idx = _parens(texts)
    if not idx:
        return None
    i = rng.choice(idx)
    return texts[:i] + texts[i + 1:]


def _add_paren(texts, rng):
    i = rng.randint(1, len(texts))
    return texts[:i] + [rng.choice("()")] + texts[i:]


def _drop_argument(texts, rng):
    spans = [s for s in _argument_spans(texts) if 0 < s[1] - s[0] <= 2]
    if not spans:
        return None
    s, e, comma = rng.choice(spans)
    drop = set(range(s, e))
    if e - s == 1 and comma is not None:
        drop.add(comma)
    return [t for i, t in enumerate(texts) if i not in drop]


def _corrupt_func_name(texts, rng):
    idx = [i for i, t in enumerate(texts) if t in FUNCTIONS]
    if not idx:
        return None
    i = rng.choice(idx)
    name = texts[i]
    choices: list[list[str]] = [[other] for other in FUNCTIONS if other != name]
    if len(name) <= 3:
        choices.append(list(name[:-1]))
    return texts[:i] + rng.choice(choices) + texts[i + 1:]


def _drop_quote(texts, rng):
    idx = [i for i, t in enumerate(texts) if t == QUOTE]
    if not idx:
        return None
    i = rng.choice(idx)
    return texts[:i] + texts[i + 1:]


_OPERATOR_POOL = ("+", "-", "*", "/", "&", ">", "<", ">=", "<=", "<>", "=", ":", ",")


def _change_operator(texts, rng):
    idx = [i for i, t in enumerate(texts) if i > 0 and t in _OPERATOR_POOL[:-1]]
    if not idx:
        return None
    i = rng.choice(idx)
    return texts[:i] + [rng.choice([o for o in _OPERATOR_POOL if o != texts[i]])] + texts[i + 1:]


def _drop_comma(texts, rng):
    idx = [i for i, t in enumerate(texts) if t == ","]
    if not idx:
        return None
    i = rng.choice(idx)
    return texts[:i] + texts[i + 1:]


@dataclass(frozen=True)
class CorruptionOp:
    name: str
    kind: str
    apply: Callable = field(repr=False, compare=False)


OPS: dict[str, CorruptionOp] = {
    op.name: op for op in (
        CorruptionOp("delete_token", "delete_token", _delete_token),
        CorruptionOp("duplicate_token", "duplicate_token", _duplicate_token),
        CorruptionOp("swap_adjacent", "swap_adjacent", _swap_adjacent),
        CorruptionOp("drop_paren", "drop_paren", _drop_paren),
        CorruptionOp("add_paren", "add_paren", _add_paren),
        CorruptionOp("drop_argument", "drop_argument", _drop_argument),
        CorruptionOp("corrupt_func_name", "corrupt_func_name", _corrupt_func_name),
        CorruptionOp("drop_quote", "drop_quote", _drop_quote),
        CorruptionOp("change_operator", "change_operator", _change_operator),
        CorruptionOp("drop_comma", "drop_comma", _drop_comma),
    )
}
ALL_OPS = tuple(OPS.values())

MAX_ATTEMPTS = 10


def resolve_ops(ops: Iterable[str | CorruptionOp] | None) -> list[CorruptionOp]:
    if ops is None:
        return list(ALL_OPS)
    out = []
    for op in ops:
        if isinstance(op, str):
            if op not in OPS:
                raise ValueError(f"unknown corruption operator {op!r}")
            op = OPS[op]
        out.append(op)
    if not out:
        raise ValueError("no corruption operators given")
    return out


def _apply_one(texts: list[str], ops: list[CorruptionOp], rng: random.Random, n: int) -> list[str] | None:
    op = rng.choice(ops)
    out = op.apply(list(texts), rng)
    if out is None:
        return None
    try:
        relexed = lex(join_texts(out))
    except TokenizeError:
        return None
    if len(relexed) > n - 1 or token_edit_distance(texts, relexed) > 2:
        return None
    return relexed


def corrupt(code: str, ops: Iterable[str | CorruptionOp] | None = None, n_ops: int = 1,
            seed: int = 0, n: int = DEFAULT_N) -> str:
    """Break ``code`` with ``n_ops`` operators so that it no longer parses.

    Each operator moves at most 2 tokens (measured after re-lexing the result).
    Attempts that leave the snippet parseable are re-rolled.
    """
    if not 1 <= n_ops <= 3:
        raise ValueError("n_ops must be in 1..3")
    ops = resolve_ops(ops)
    texts = lex(code)
    rng = random.Random(seed)
    for _ in range(MAX_ATTEMPTS):
        current = texts
        for _ in range(n_ops):
            nxt = _apply_one(current, ops, rng, n)
            if nxt is None:
                break
            current = nxt
        else:
            broken = join_texts(current)
            if current != texts and not parses(broken):
                return broken
    raise CannotCorrupt(f"no breaking corruption of {code!r} in {MAX_ATTEMPTS} attempts")


# ---------------------------------------------------------------------------
# benchmarks

@dataclass(frozen=True)
class BenchmarkEntry:
    broken: str
    fixed: Optional[str]
    grids: tuple[GridContext, ...]

    def to_json(self) -> dict:
        return {"broken": self.broken, "fixed": self.fixed, "grids": [g.to_json() for g in self.grids]}

    @classmethod
    def from_json(cls, rec: dict) -> "BenchmarkEntry":
        if not isinstance(rec.get("broken"), str):
            raise ValueError("benchmark record needs a string 'broken'")
        return cls(rec["broken"], rec.get("fixed"), tuple(GridContext.from_json(g) for g in rec.get("grids", [])))


@dataclass
class Benchmark:
    entries: list[BenchmarkEntry]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def random_grid(rng: random.Random) -> GridContext:
    return GridContext({f"{c}{r}": rng.randint(1, 99) for r in range(1, GRID_ROWS + 1) for c in GRID_COLUMNS})


def _clean_on(code: str, grids: Sequence[GridContext]) -> bool:
    return all(not isinstance(evaluate_source(code, g), ErrorCode) for g in grids)


def build_benchmark(corpus: Sequence[CorpusEntry], n: int, seed: int, n_grids: int = 2,
                    ops: Iterable[str | CorruptionOp] | None = None,
                    split: str | None = "bench") -> Benchmark:
    """Single-operator corruptions of ``n`` bench-split formulas, each with grid fixtures.

    Formulas whose ground truth errors on every drawn grid set (e.g. a literal
    division by zero) are skipped, since execution match could never succeed.
    """
    pool = sorted(select_split(corpus, split) if split else corpus, key=lambda e: e.id)
    if n > len(pool):
        raise ValueError(f"requested {n} entries but only {len(pool)} {split} entries exist")
    rng = random.Random(seed)
    order = list(pool)
    rng.shuffle(order)
    entries = []
    for e in order:
        if len(entries) == n:
            break
        grids = None
        for _ in range(3):
            candidate = tuple(random_grid(rng) for _ in range(n_grids))
            if _clean_on(e.code, candidate):
                grids = candidate
                break
        if grids is None:
            continue
        try:
            broken = corrupt(e.code, ops, 1, rng.getrandbits(63))
        except CannotCorrupt:
            continue
        entries.append(BenchmarkEntry(broken, e.code, grids))
    if len(entries) < n:
        raise ValueError(f"only {len(entries)} usable entries for a benchmark of {n}")
    return Benchmark(entries)


def write_benchmark(bench: Benchmark, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in bench:
            f.write(json.dumps(e.to_json(), ensure_ascii=False) + "\n")


def read_benchmark(path: str | Path) -> Benchmark:
    with open(path, encoding="utf-8") as f:
        return Benchmark([BenchmarkEntry.from_json(json.loads(line)) for line in f if line.strip()])
