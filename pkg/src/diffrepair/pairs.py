"""Synthetic (broken, fixed) pairs from intermediate reverse-process decodings, plus dataset analytics."""
from __future__ import annotations

import itertools
import json
import random
import statistics
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .corpus import CannotCorrupt, CorpusEntry, CorruptionOp, corrupt
from .diffusion.model import DiffusionModel
from .diffusion.sampling import Trajectory, sample_many
from .diffusion.schedule import NoiseSchedule
from .diffusion.train import derive_seed
from .evaluation.metrics import edit_positions, token_edit_distance
from .formula import detokenize, lex, parses

BUDGET_FACTOR = 10


@dataclass(frozen=True)
class RepairPair:
    broken: str
    fixed: str
    t_pct: Optional[float]
    source: str
    seed: int

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "RepairPair":
        return cls(obj["broken"], obj["fixed"], obj.get("t_pct"), obj.get("source", "diffusion"),
                   int(obj.get("seed", 0)))


class BudgetExhausted(RuntimeError):
    def __init__(self, pairs: list[RepairPair], attempts: int):
        self.pairs = pairs
        self.attempts = attempts
        self.acceptance_rate = len(pairs) / attempts if attempts else 0.0
        super().__init__(f"collected {len(pairs)} pairs in {attempts} attempts "
                         f"(acceptance rate {self.acceptance_rate:.3f})")


@dataclass
class Generation:
    pairs: list[RepairPair]
    attempts: int
    drawn_t: Counter = field(default_factory=Counter)

    @property
    def acceptance_rate(self) -> float:
        return len(self.pairs) / self.attempts if self.attempts else 0.0


def pick_pair(traj: Trajectory, T: int, rng: random.Random) -> tuple[int, Optional[RepairPair]]:
    """Draw t uniformly from the recorded (nonzero) snapshot steps; keep (c_t, c_0) if it qualifies."""
    steps = [t for t, _ in traj.steps if t > 0]
    if not steps:
        return 0, None
    t = rng.choice(steps)
    c_t, c_0 = traj.at(t), traj.final
    if c_t.k == 0 or c_t == c_0:
        return t, None
    fixed = detokenize(c_0)
    broken = detokenize(c_t)
    if broken == fixed or not parses(fixed):
        return t, None
    return t, RepairPair(broken, fixed, 100.0 * t / T, "diffusion", traj.seed)


def generate_pairs_detailed(model: DiffusionModel, schedule: NoiseSchedule, n_pairs: int, seed: int,
                            snapshot_stride: Optional[int] = None, batch: int = 128,
                            strict: bool = True) -> Generation:
    if n_pairs < 0:
        raise ValueError("n_pairs must be >= 0")
    stride = snapshot_stride or max(1, schedule.T // 20)
    budget = BUDGET_FACTOR * n_pairs
    gen = Generation([], 0)
    while len(gen.pairs) < n_pairs and gen.attempts < budget:
        count = min(batch, budget - gen.attempts)
        seeds = [derive_seed(seed, "gen", gen.attempts + i) % (1 << 31) for i in range(count)]
        for traj in sample_many(model, schedule, seeds, snapshot_stride=stride):
            if len(gen.pairs) == n_pairs:
                break
            gen.attempts += 1
            t, pair = pick_pair(traj, schedule.T, random.Random(derive_seed(traj.seed, "pick")))
            gen.drawn_t[t] += 1
            if pair is not None:
                gen.pairs.append(pair)
    if len(gen.pairs) < n_pairs and strict:
        raise BudgetExhausted(gen.pairs, gen.attempts)
    return gen


def generate_pairs(model: DiffusionModel, schedule: NoiseSchedule, n_pairs: int, seed: int,
                   snapshot_stride: Optional[int] = None, batch: int = 128) -> list[RepairPair]:
    return generate_pairs_detailed(model, schedule, n_pairs, seed, snapshot_stride, batch).pairs


def generate_baseline_pairs(corpus: Sequence[CorpusEntry | str], ops: Iterable[str | CorruptionOp] | None,
                            n_pairs: int, seed: int) -> list[RepairPair]:
    """(corrupt(c), c) pairs from the syntactic corruptor, cycling through a shuffled corpus."""
    codes = [c.code if isinstance(c, CorpusEntry) else c for c in corpus]
    if not codes:
        raise ValueError("empty corpus")
    ops = list(ops) if ops is not None else None
    rng = random.Random(seed)
    order = list(range(len(codes)))
    rng.shuffle(order)
    pairs: list[RepairPair] = []
    attempts = 0
    for attempt in itertools.count():
        if len(pairs) == n_pairs:
            break
        if attempt >= BUDGET_FACTOR * n_pairs:
            raise BudgetExhausted(pairs, attempts)
        attempts += 1
        fixed = codes[order[attempt % len(codes)]]
        cseed = derive_seed(seed, "corrupt", attempt) % (1 << 31)
        try:
            broken = corrupt(fixed, ops, 1, cseed)
        except CannotCorrupt:
            continue
        if broken != fixed and parses(fixed) and lex(broken):
            pairs.append(RepairPair(broken, fixed, None, "syntactic", cseed))
    return pairs


def write_pairs(pairs: Iterable[RepairPair], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in pairs:
            f.write(json.dumps(p.to_json(), sort_keys=True) + "\n")


def read_pairs(path: str | Path) -> list[RepairPair]:
    with open(path, encoding="utf-8") as f:
        return [RepairPair.from_json(json.loads(line)) for line in f if line.strip()]


# ---------------------------------------------------------------------------
# analytics

@dataclass(frozen=True)
class DatasetStats:
    localization: Optional[float]
    diversity: float
    complexity: float
    n_pairs: int

    def to_json(self) -> dict:
        return asdict(self)


def ngrams(tokens: Sequence[str], n: int) -> set[tuple[str, ...]]:
    if len(tokens) < n:
        return {tuple(tokens)}
    return {tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)}


def jaccard(a: set, b: set) -> float:
    union = a | b
    return len(a & b) / len(union) if union else 1.0


def pair_localization(broken: Sequence[str], fixed: Sequence[str]) -> Optional[float]:
    """Mean gap between adjacent distinct edit positions; None with fewer than two."""
    pos = sorted(set(edit_positions(broken, fixed)))
    if len(pos) < 2:
        return None
    return statistics.fmean(b - a for a, b in zip(pos, pos[1:]))


def diversity(snippets: Sequence[Sequence[str]], ngram_n: int = 3) -> float:
    """Mean pairwise n-gram-set Jaccard similarity (lower means more diverse)."""
    sets = [ngrams(s, ngram_n) for s in snippets]
    if len(sets) < 2:
        return 1.0
    return statistics.fmean(jaccard(a, b) for a, b in itertools.combinations(sets, 2))


def analyze_dataset(pairs: Sequence[RepairPair], sample_size: int = 200, ngram_n: int = 3,
                    seed: int = 0) -> DatasetStats:
    if not pairs:
        raise ValueError("no pairs to analyze")
    toks = [(lex(p.broken), lex(p.fixed)) for p in pairs]
    locs = [v for v in (pair_localization(b, f) for b, f in toks) if v is not None]
    complexity = statistics.fmean(token_edit_distance(b, f) for b, f in toks)
    rng = random.Random(seed)
    idx = sorted(rng.sample(range(len(pairs)), min(sample_size, len(pairs))))
    div = diversity([toks[i][1] for i in idx], ngram_n)
    return DatasetStats(statistics.fmean(locs) if locs else None, div, complexity, len(pairs))


def generation_stats(gen: Generation, T: int, sample_size: int = 200, ngram_n: int = 3, seed: int = 0) -> dict:
    out: dict = {"acceptance_rate": gen.acceptance_rate, "attempts": gen.attempts, "n_pairs": len(gen.pairs),
                 "t_histogram_drawn": {str(t): c for t, c in sorted(gen.drawn_t.items())},
                 "t_histogram_kept": dict(sorted(Counter(str(p.t_pct) for p in gen.pairs).items(),
                                                 key=lambda kv: float(kv[0])))}
    if gen.pairs:
        out.update(analyze_dataset(gen.pairs, sample_size, ngram_n, seed).to_json())
        small = [p for p in gen.pairs if token_edit_distance(lex(p.broken), lex(p.fixed)) <= 2]
        out["small_edit_pairs"] = len(small)
        out["small_edit_late_fraction"] = (
            sum(p.t_pct <= 25.0 for p in small) / len(small) if small else None)
    return out
