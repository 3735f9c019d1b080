"""Per-step change trends of reverse trajectories, noise-band tables and solved-set overlap."""
from __future__ import annotations

import itertools
import math
import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence


class LengthMismatch(ValueError):
    pass


def changed_positions(a: Sequence[int], b: Sequence[int]) -> list[int]:
    if len(a) != len(b):
        raise LengthMismatch("snapshots must share the fixed length n")
    return [i for i, (x, y) in enumerate(zip(a, b)) if x != y]


def spans(positions: Sequence[int]) -> list[int]:
    """Lengths of maximal runs of consecutive positions."""
    out: list[int] = []
    prev = None
    for p in sorted(positions):
        if prev is not None and p == prev + 1:
            out[-1] += 1
        else:
            out.append(1)
        prev = p
    return out


@dataclass
class TrendReport:
    steps: list[int]                 # t of the later snapshot in each transition, decreasing
    mean_fraction: list[float]
    span_lengths: dict[int, int] = field(default_factory=dict)
    n_trajectories: int = 0

    def decile_means(self) -> tuple[float, float]:
        """Mean changed fraction over the first and the last tenth of transitions."""
        m = max(1, math.ceil(len(self.mean_fraction) / 10))
        return statistics.fmean(self.mean_fraction[:m]), statistics.fmean(self.mean_fraction[-m:])

    def to_json(self) -> dict:
        first, last = self.decile_means()
        return {"n_trajectories": self.n_trajectories, "steps": self.steps,
                "mean_fraction": self.mean_fraction,
                "span_lengths": {str(k): v for k, v in sorted(self.span_lengths.items())},
                "first_decile_mean": first, "last_decile_mean": last}


def trend_analysis(trajectories: Sequence) -> TrendReport:
    """Positional change statistics between consecutive snapshots.

    Every trajectory must carry the same snapshot steps (same stride).
    """
    if not trajectories:
        raise ValueError("no trajectories")
    steps0 = [t for t, _ in trajectories[0].steps]
    sums = [0.0] * (len(steps0) - 1)
    span_hist: Counter = Counter()
    for traj in trajectories:
        if [t for t, _ in traj.steps] != steps0:
            raise LengthMismatch("trajectories use different snapshot steps")
        for i, ((_, a), (_, b)) in enumerate(zip(traj.steps, traj.steps[1:])):
            pos = changed_positions(a.ids, b.ids)
            sums[i] += len(pos) / len(a.ids)
            span_hist.update(spans(pos))
    n = len(trajectories)
    return TrendReport(steps0[1:], [s / n for s in sums], dict(span_hist), n)


def band_table(bands: Sequence[Mapping], bins: int = 5) -> list[dict]:
    """Mean repair band per complexity bin, for the band-vs-complexity chart."""
    rows = []
    solved = [b for b in bands if b.get("min_level") is not None and b.get("complexity") is not None]
    for k in range(bins):
        lo, hi = k / bins, (k + 1) / bins
        inside = [b for b in solved if lo <= b["complexity"] < hi or (k == bins - 1 and b["complexity"] == hi)]
        rows.append({
            "complexity_lo": lo, "complexity_hi": hi, "count": len(inside),
            "mean_min_level": statistics.fmean(b["min_level"] for b in inside) if inside else None,
            "mean_max_level": statistics.fmean(b["max_level"] for b in inside) if inside else None,
        })
    return rows


def solved_overlap(reports: Mapping[str, Sequence[bool]]) -> dict[str, int]:
    """Counts for every region of the Venn partition of solved entries.

    Keys are the '+'-joined names of the generators that solved an entry;
    ``"none"`` counts entries nobody solved.
    """
    names = list(reports)
    if not 2 <= len(names) <= 3:
        raise ValueError("overlap needs 2 or 3 generators")
    lengths = {len(v) for v in reports.values()}
    if len(lengths) != 1:
        raise LengthMismatch("flag vectors must cover the same benchmark")
    regions = {"+".join(c): 0 for r in range(1, len(names) + 1) for c in itertools.combinations(names, r)}
    regions["none"] = 0
    for flags in zip(*(reports[n] for n in names)):
        who = [n for n, f in zip(names, flags) if f]
        regions["+".join(who) if who else "none"] += 1
    return regions
