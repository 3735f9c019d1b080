"""Repair by injection: noise the broken snippet's embedding to step t and let the reverse process finish it."""
from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import torch

from .corpus import Benchmark, BenchmarkEntry
from .diffusion.model import DiffusionModel
from .diffusion.sampling import reverse
from .diffusion.schedule import NoiseSchedule, forward_noise
from .diffusion.train import derive_seed
from .evaluation.metrics import execution_match, sketch_match, token_edit_distance
from .formula import detokenize, lex, parses, tokenize

LEVELS = tuple(range(10, 101, 10))
POOLS = ("any", "best", "vote")
MAX_DISTANCE = 5


@dataclass(frozen=True)
class RepairCandidate:
    code: str
    noise_level: float
    eps_seed: int
    parsed_ok: bool

    def to_json(self) -> dict:
        return {"code": self.code, "noise_level": self.noise_level, "eps_seed": self.eps_seed,
                "parsed_ok": self.parsed_ok}


def _generator(eps_seed: int, level: float) -> torch.Generator:
    return torch.Generator().manual_seed(derive_seed("inject", int(eps_seed), float(level)))


@torch.no_grad()
def inject_many(model: DiffusionModel, schedule: NoiseSchedule,
                jobs: Sequence[tuple[str, float, int]], batch: int = 256) -> list[RepairCandidate]:
    """Run ``(broken, noise_pct, eps_seed)`` jobs, batching those that share a start step.

    Each job's noise comes from its own generator, so results do not depend on
    how jobs are grouped.
    """
    n = model.cfg.n
    seqs = [tokenize(b, n) for b, _, _ in jobs]  # TooLong / UnknownCharacter surface here
    out: list[Optional[RepairCandidate]] = [None] * len(jobs)
    by_t: dict[int, list[int]] = {}
    for i, (_, pct, _) in enumerate(jobs):
        if not 0 <= pct <= 100:
            raise ValueError(f"noise level {pct} outside [0, 100]")
        by_t.setdefault(schedule.step_for_percent(pct), []).append(i)
    dtype = next(model.parameters()).dtype
    for t, idx in sorted(by_t.items()):
        for lo in range(0, len(idx), batch):
            chunk = idx[lo:lo + batch]
            gens = [_generator(jobs[i][2], jobs[i][1]) for i in chunk]
            ids = torch.tensor([seqs[i].ids for i in chunk])
            x0 = model.embed(ids)
            eps = torch.stack([torch.randn(x0.shape[1:], generator=g, dtype=dtype) for g in gens])
            x_t = forward_noise(schedule, x0, t, eps) if t > 0 else x0
            finals, _ = reverse(model, schedule, x_t, t, gens)
            for i, seq in zip(chunk, finals):
                code = detokenize(seq)
                out[i] = RepairCandidate(code, float(jobs[i][1]), int(jobs[i][2]), parses(code))
    return out  # type: ignore[return-value]


def inject_repair(model: DiffusionModel, schedule: NoiseSchedule, broken: str, noise_pct: float,
                  eps_seed: int) -> RepairCandidate:
    return inject_many(model, schedule, [(broken, noise_pct, eps_seed)])[0]


def eps_seeds(seeds_per_level: int, seed: int = 0) -> list[int]:
    return [derive_seed(seed, "repair", s) % (1 << 31) for s in range(seeds_per_level)]


def sweep(model: DiffusionModel, schedule: NoiseSchedule, broken: str, levels: Sequence[float] = LEVELS,
          seeds_per_level: int = 1, seed: int = 0) -> list[RepairCandidate]:
    """All candidates for one snippet, ordered by level then seed."""
    if not levels:
        raise ValueError("levels must be nonempty")
    seeds = eps_seeds(seeds_per_level, seed)
    return inject_many(model, schedule, [(broken, lv, s) for lv in levels for s in seeds])


# ---------------------------------------------------------------------------
# oracles

Oracle = Callable[[str, BenchmarkEntry], bool]


def _close(code: str, broken: str) -> bool:
    try:
        return token_edit_distance(lex(code), lex(broken)) < MAX_DISTANCE
    except ValueError:
        return False


def oracle_exec(code: str, entry: BenchmarkEntry) -> bool:
    return entry.fixed is not None and execution_match(code, entry.fixed, entry.grids)


def oracle_exec_dist(code: str, entry: BenchmarkEntry) -> bool:
    if entry.fixed is None:
        return oracle_bifi(code, entry)
    return oracle_exec(code, entry) and _close(code, entry.broken)


def oracle_bifi(code: str, entry: BenchmarkEntry) -> bool:
    return parses(code) and _close(code, entry.broken)


def oracle_sketch(code: str, entry: BenchmarkEntry) -> bool:
    return entry.fixed is not None and sketch_match(code, entry.fixed)


ORACLES: dict[str, Oracle] = {
    "exec": oracle_exec, "exec_dist": oracle_exec_dist, "bifi": oracle_bifi, "sketch": oracle_sketch,
}


def get_oracle(name: str) -> Oracle:
    if name not in ORACLES:
        raise ValueError(f"unknown oracle {name!r}; choose from {sorted(ORACLES)}")
    return ORACLES[name]


# ---------------------------------------------------------------------------
# pooling

def pool_any(candidates: Sequence[RepairCandidate], oracle: Callable[[RepairCandidate], bool]) -> bool:
    return any(oracle(c) for c in candidates)


def pool_vote(candidates: Sequence[RepairCandidate]) -> RepairCandidate:
    """Plurality string; ties go to the string seen at the lowest level, then lowest seed."""
    if not candidates:
        raise ValueError("no candidates to vote over")
    counts: dict[str, int] = {}
    first: dict[str, RepairCandidate] = {}
    for c in candidates:
        counts[c.code] = counts.get(c.code, 0) + 1
        rep = first.get(c.code)
        if rep is None or (c.noise_level, c.eps_seed) < (rep.noise_level, rep.eps_seed):
            first[c.code] = c
    return min(first.values(), key=lambda c: (-counts[c.code], c.noise_level, c.eps_seed))


def pool_best_level(rates: dict[float, float]) -> tuple[float, float]:
    """Level with the highest benchmark success rate; ties go to the lower level."""
    if not rates:
        raise ValueError("no levels evaluated")
    level = min(rates, key=lambda lv: (-rates[lv], lv))
    return level, rates[level]


def pass_at_k(flags: Sequence[bool], k: int) -> bool:
    """Nested draws: true iff one of the first k candidates passes."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return any(flags[:k])


def pass_at_k_unbiased(n: int, c: int, k: int) -> float:
    """1 - C(n-c, k) / C(n, k): chance that k of n draws include a correct one."""
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    if n - c < k:
        return 1.0
    return 1.0 - math.comb(n - c, k) / math.comb(n, k)


# ---------------------------------------------------------------------------
# benchmark runs

@dataclass
class EntryReport:
    broken: str
    fixed: Optional[str]
    candidates: list[RepairCandidate]
    correct: list[bool]
    pooled: dict[str, Optional[RepairCandidate]] = field(default_factory=dict)
    success: dict[str, bool] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "broken": self.broken, "fixed": self.fixed,
            "candidates": [dict(c.to_json(), correct=ok) for c, ok in zip(self.candidates, self.correct)],
            "pooled": {k: (v.to_json() if v else None) for k, v in self.pooled.items()},
            "success": self.success,
        }


@dataclass
class RepairReport:
    entries: list[EntryReport]
    summary: dict

    def write(self, report_path: str | Path, summary_path: str | Path) -> None:
        with open(report_path, "w", encoding="utf-8") as f:
            for e in self.entries:
                f.write(json.dumps(e.to_json(), sort_keys=True) + "\n")
        Path(summary_path).write_text(json.dumps(self.summary, indent=2, sort_keys=True) + "\n")


def resolve_pools(pools: Iterable[str] | None) -> list[str]:
    pools = list(POOLS if pools is None else pools)
    bad = [p for p in pools if p not in POOLS]
    if bad or not pools:
        raise ValueError(f"unknown pool(s) {bad}; choose from {list(POOLS)}")
    return pools


def noise_band(entry: EntryReport) -> Optional[tuple[float, float]]:
    levels = [c.noise_level for c, ok in zip(entry.candidates, entry.correct) if ok]
    return (min(levels), max(levels)) if levels else None


def normalized_complexity(broken: str, fixed: Optional[str]) -> Optional[float]:
    if fixed is None:
        return None
    a, b = lex(broken), lex(fixed)
    return token_edit_distance(a, b) / max(len(a), len(b), 1)


def run_repair(model: DiffusionModel, schedule: NoiseSchedule, bench: Benchmark | Sequence[BenchmarkEntry],
               levels: Sequence[float] = LEVELS, seeds_per_level: int = 3, oracle: str = "exec_dist",
               pools: Iterable[str] | None = None, seed: int = 0, batch: int = 256,
               extra_oracles: Sequence[str] = ("exec", "sketch")) -> RepairReport:
    """Sweep every benchmark entry over ``levels`` x ``seeds_per_level`` and pool the results."""
    entries = list(bench)
    if not entries:
        raise ValueError("empty benchmark")
    if not levels:
        raise ValueError("levels must be nonempty")
    pools = resolve_pools(pools)
    judge = get_oracle(oracle)
    seeds = eps_seeds(seeds_per_level, seed)
    jobs = [(e.broken, lv, s) for e in entries for lv in levels for s in seeds]
    flat = inject_many(model, schedule, jobs, batch=batch)
    per = len(levels) * len(seeds)

    reports: list[EntryReport] = []
    for i, e in enumerate(entries):
        cands = flat[i * per:(i + 1) * per]
        reports.append(EntryReport(e.broken, e.fixed, cands, [judge(c.code, e) for c in cands]))

    def flag(rep: EntryReport, level, s_index) -> bool:
        return rep.correct[list(levels).index(level) * len(seeds) + s_index]

    # per-level curves: averaged over seeds, and first-seed only (the latter picks best%)
    curve = {lv: statistics.fmean(flag(r, lv, s) for r in reports for s in range(len(seeds))) for lv in levels}
    first_seed = {lv: statistics.fmean(flag(r, lv, 0) for r in reports) for lv in levels}
    best_level, _ = pool_best_level(first_seed)

    for e, r in zip(entries, reports):
        if "any" in pools:
            hit = next((c for c, ok in zip(r.candidates, r.correct) if ok), None)
            r.pooled["any"], r.success["any"] = hit, hit is not None
        if "best" in pools:
            c = r.candidates[list(levels).index(best_level) * len(seeds)]
            r.pooled["best"], r.success["best"] = c, judge(c.code, e)
        if "vote" in pools:
            c = pool_vote(r.candidates)
            r.pooled["vote"], r.success["vote"] = c, judge(c.code, e)

    summary: dict = {
        "n": len(reports), "levels": list(levels), "seeds_per_level": len(seeds), "oracle": oracle,
        "eps_seeds": seeds,
        "rates": {p: statistics.fmean(r.success[p] for r in reports) for p in pools},
        "curve": {str(lv): v for lv, v in curve.items()},
        "curve_first_seed": {str(lv): v for lv, v in first_seed.items()},
        "best_level": best_level,
        "parse_rate_by_level": {str(lv): statistics.fmean(
            c.parsed_ok for r in reports for c in r.candidates if c.noise_level == lv) for lv in levels},
        "distance_to_input_by_level": {str(lv): statistics.fmean(
            token_edit_distance(lex(c.code), lex(r.broken)) for r in reports for c in r.candidates
            if c.noise_level == lv) for lv in levels},
    }
    summary["optimal_level"] = optimal_levels(curve)
    # rates for the other oracles so one sweep gives the whole table
    for name in extra_oracles:
        if name == oracle:
            continue
        other = get_oracle(name)
        table = {}
        for p in pools:
            hits = []
            for e, r in zip(entries, reports):
                if p == "any":
                    hits.append(any(other(c.code, e) for c in r.candidates))
                else:
                    hits.append(other(r.pooled[p].code, e))
            table[p] = statistics.fmean(hits)
        summary.setdefault("rates_by_oracle", {})[name] = table
    if len(seeds) > 1:
        summary["pass_at_k"] = pass_at_k_table(reports, levels, len(seeds), best_level)
    bands = []
    for r in reports:
        band = noise_band(r)
        bands.append({"min_level": band[0] if band else None, "max_level": band[1] if band else None,
                      "complexity": normalized_complexity(r.broken, r.fixed)})
    summary["noise_bands"] = bands
    summary["noise_band_normalization"] = "edit distance / max(len(broken), len(fixed))"
    return RepairReport(reports, summary)


def optimal_levels(curve: dict[float, float]) -> dict:
    """Argmax of the curve, plus the highest level whose rate reaches mean + one stdev."""
    vals = list(curve.values())
    argmax, _ = pool_best_level(curve)
    threshold = statistics.fmean(vals) + (statistics.pstdev(vals) if len(vals) > 1 else 0.0)
    above = [lv for lv, v in curve.items() if v >= threshold - 1e-12]
    return {"argmax": argmax, "mean_plus_std_threshold": threshold,
            "highest_level_above_threshold": max(above) if above else None}


def pass_at_k_table(reports: Sequence[EntryReport], levels: Sequence[float], n_seeds: int,
                    level: float) -> dict:
    ks = [k for k in (1, 3, 5) if k <= n_seeds]
    pos = list(levels).index(level) * n_seeds
    nested, unbiased = {}, {}
    for k in ks:
        flags = [r.correct[pos:pos + n_seeds] for r in reports]
        nested[str(k)] = statistics.fmean(pass_at_k(f, k) for f in flags)
        unbiased[str(k)] = statistics.fmean(pass_at_k_unbiased(n_seeds, sum(f), k) for f in flags)
    return {"level": level, "nested": nested, "unbiased": unbiased}
