"""SVG charts for noise curves, change trends and repair bands. Output bytes are reproducible."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "diffrepair"
matplotlib.rcParams["svg.fonttype"] = "none"

_META = {"Date": None, "Creator": None}


def _save(fig, path: str | Path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def plot_noise_curve(curve: Mapping, path: str | Path, label: str = "execution match") -> None:
    levels = sorted(curve, key=float)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot([float(x) for x in levels], [curve[x] for x in levels], marker="o")
    ax.set_xlabel("noise level (% of T)")
    ax.set_ylabel(label)
    ax.set_ylim(0, 1)
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_trends(report: Mapping, path: str | Path) -> None:
    steps = report["steps"]
    spans = report.get("span_lengths", {})
    fig, (a, b) = plt.subplots(1, 2, figsize=(8, 3.2))
    a.plot(steps, report["mean_fraction"])
    a.invert_xaxis()
    a.set_xlabel("t")
    a.set_ylabel("fraction of tokens changed")
    keys = sorted(spans, key=int)
    b.bar([int(k) for k in keys], [spans[k] for k in keys])
    b.set_xlabel("changed span length")
    b.set_ylabel("count")
    _save(fig, path)


def plot_bands(rows: Sequence[Mapping], path: str | Path) -> None:
    rows = [r for r in rows if r.get("mean_min_level") is not None]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    if rows:
        x = [(r["complexity_lo"] + r["complexity_hi"]) / 2 for r in rows]
        ax.fill_between(x, [r["mean_min_level"] for r in rows], [r["mean_max_level"] for r in rows], alpha=0.4)
    ax.set_xlabel("normalized edit distance")
    ax.set_ylabel("noise level (% of T)")
    ax.set_ylim(0, 100)
    _save(fig, path)
