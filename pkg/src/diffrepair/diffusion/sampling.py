"""Reverse process: unconditional sampling and resumption from an injected state."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import torch

from ..formula import TokenSeq, detokenize
from .model import DiffusionModel
from .schedule import NoiseSchedule


@dataclass(frozen=True)
class Trajectory:
    """Decoded snapshots ``(t, seq)`` in strictly decreasing t; the last is t = 0."""

    steps: tuple[tuple[int, TokenSeq], ...]
    seed: int = 0

    @property
    def final(self) -> TokenSeq:
        return self.steps[-1][1]

    def at(self, t: int) -> TokenSeq:
        for step, seq in self.steps:
            if step == t:
                return seq
        raise KeyError(t)

    def to_json(self) -> dict:
        return {"seed": self.seed, "steps": [[t, list(seq.ids)] for t, seq in self.steps],
                "final": detokenize(self.final)}

    @classmethod
    def from_json(cls, obj: dict) -> "Trajectory":
        return cls(tuple((int(t), TokenSeq(tuple(ids))) for t, ids in obj["steps"]), int(obj.get("seed", 0)))


def _noise(gens: Sequence[torch.Generator], shape, dtype) -> torch.Tensor:
    return torch.stack([torch.randn(shape, generator=g, dtype=dtype) for g in gens])


@torch.no_grad()
def reverse(model: DiffusionModel, schedule: NoiseSchedule, x_t: torch.Tensor, t_start: int,
            gens: Sequence[torch.Generator], stride: Optional[int] = None):
    """Denoise a batch from step ``t_start`` down to 0.

    Each step applies x_{t-1} = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, where
    x0 is N(x_t, t), or with the "rounded" sampler E(argmax H(D(N(x_t, t)))).
    With self-conditioning, N also receives its previous (unrounded) estimate.
    The returned decoding is H(D(N(x_0, 0))) with no further noise. When
    ``stride`` is given, the decoding of N(x_t, t) is recorded whenever
    ``t % stride == 0``.

    Returns (final TokenSeqs, list of per-example snapshot lists).
    """
    B = x_t.shape[0]
    shape = x_t.shape[1:]
    snaps: list[list[tuple[int, TokenSeq]]] = [[] for _ in range(B)]
    x = x_t
    rounded = model.cfg.sampler == "rounded"
    prev = None
    for t in range(t_start, 0, -1):
        tt = torch.full((B,), t, dtype=torch.long)
        x0_hat = prev = model.N(x, tt, prev)
        record = bool(stride) and t % stride == 0
        if record or rounded:
            argmax = model.logits(x0_hat).argmax(-1)
        if record:
            for b, row in enumerate(argmax.tolist()):
                snaps[b].append((t, TokenSeq.from_argmax(row)))
        if rounded:
            x0_hat = model.embed(argmax)
        a = float(schedule.alpha_bar[t])
        x = a ** 0.5 * x0_hat + (1.0 - a) ** 0.5 * _noise(gens, shape, x.dtype)
    x0_hat = model.N(x, torch.zeros(B, dtype=torch.long), prev)
    _, finals = model.decode(x0_hat)
    for b, s in enumerate(finals):
        snaps[b].append((0, s))
    return finals, snaps


@torch.no_grad()
def sample_many(model: DiffusionModel, schedule: NoiseSchedule, seeds: Sequence[int],
                snapshot_stride: int = 10) -> list[Trajectory]:
    """One reverse run per seed, starting from x_T ~ N(0, I) drawn from that seed."""
    if snapshot_stride < 1:
        raise ValueError("snapshot_stride must be >= 1")
    gens = [torch.Generator().manual_seed(int(s)) for s in seeds]
    dtype = next(model.parameters()).dtype
    shape = (model.cfg.n, model.cfg.d)
    x_T = _noise(gens, shape, dtype)
    _, snaps = reverse(model, schedule, x_T, schedule.T, gens, stride=snapshot_stride)
    return [Trajectory(tuple(s), int(seed)) for s, seed in zip(snaps, seeds)]


def sample(model: DiffusionModel, schedule: NoiseSchedule, seed: int, snapshot_stride: int = 10) -> Trajectory:
    return sample_many(model, schedule, [seed], snapshot_stride)[0]


def sample_batched(model, schedule, seeds: Sequence[int], snapshot_stride: int = 10,
                   batch: int = 256) -> list[Trajectory]:
    out: list[Trajectory] = []
    for i in range(0, len(seeds), batch):
        out.extend(sample_many(model, schedule, seeds[i:i + batch], snapshot_stride))
    return out
