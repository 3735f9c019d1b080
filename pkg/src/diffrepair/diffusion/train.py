"""Three-part loss and the seeded, resumable training loop."""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import torch

from ..formula import TokenSeq, tokenize
from .model import DiffusionModel, NonFinite
from .schedule import NoiseSchedule, forward_noise

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 8000
    batch: int = 64
    lr: float = 2e-4
    seed: int = 0
    grad_clip: float = 1.0
    log_every: int = 100
    warmup: int = 200
    decay: str = "none"  # "cosine" anneals to 0 at ``steps``

    def __post_init__(self):
        if self.decay not in ("none", "cosine"):
            raise ValueError(f"unknown lr decay {self.decay!r}")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class LossResult:
    total: torch.Tensor
    denoise: torch.Tensor
    decode: torch.Tensor
    ce: torch.Tensor

    def values(self) -> tuple[float, float, float, float]:
        return (self.denoise.item(), self.decode.item(), self.ce.item(), self.total.item())


def loss(model: DiffusionModel, schedule: NoiseSchedule, ids: torch.Tensor, t, eps: torch.Tensor,
         step: Optional[int] = None, use_prev: Optional[torch.Tensor] = None) -> LossResult:
    """Sum of the denoising, decoding and cross-entropy terms.

    ``ids`` is (B, n) or (n,); ``t`` in 1..T, scalar or per example.
    """
    if ids.dim() == 1:
        ids, eps = ids[None], eps[None]
    t = torch.as_tensor(t)
    if t.dim() == 0:
        t = t.expand(ids.shape[0])
    if int(t.min()) < 1 or int(t.max()) > schedule.T:
        raise ValueError(f"t must lie in 1..{schedule.T}")
    parts = model.loss_parts(ids, lambda x0: forward_noise(schedule, x0, t, eps), t, use_prev)
    total = parts[0] + parts[1] + parts[2]
    if not all(torch.isfinite(p) for p in parts):
        raise NonFinite("non-finite loss " + ", ".join(f"{p.item():.4g}" for p in parts), step)
    return LossResult(total, *parts)


def derive_seed(*parts) -> int:
    digest = hashlib.sha256(":".join(map(str, parts)).encode()).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


def encode_corpus(codes: Sequence[str], n: int) -> torch.Tensor:
    return torch.tensor([tokenize(c, n).ids for c in codes], dtype=torch.long)


@dataclass
class TrainResult:
    model: DiffusionModel
    optimizer: torch.optim.Optimizer
    step: int
    log: list[dict] = field(default_factory=list)


def make_optimizer(model: DiffusionModel, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=cfg.lr)


def _lr_at(cfg: TrainConfig, step: int) -> float:
    if cfg.warmup and step < cfg.warmup:
        return cfg.lr * (step + 1) / cfg.warmup
    if cfg.decay == "cosine":
        done = (step - cfg.warmup) / max(1, cfg.steps - cfg.warmup)
        return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * min(1.0, done)))
    return cfg.lr


def train(model: DiffusionModel, schedule: NoiseSchedule, data: torch.Tensor, cfg: TrainConfig,
          optimizer: Optional[torch.optim.Optimizer] = None, start_step: int = 0,
          on_log: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train on token-id rows ``data`` (N, n) from ``start_step`` up to ``cfg.steps``.

    Each step draws its batch, timesteps and noise from a generator seeded by
    (seed, step), so an interrupted run resumed from a checkpoint follows the
    same trajectory as an uninterrupted one.
    """
    if len(data) == 0:
        raise ValueError("empty training corpus")
    optimizer = optimizer or make_optimizer(model, cfg)
    model.train()
    rows: list[dict] = []
    acc = [0.0, 0.0, 0.0, 0.0]
    count = 0
    dtype = next(model.parameters()).dtype
    for step in range(start_step, cfg.steps):
        g = torch.Generator().manual_seed(derive_seed(cfg.seed, "train", step))
        idx = torch.randint(len(data), (cfg.batch,), generator=g)
        t = torch.randint(1, schedule.T + 1, (cfg.batch,), generator=g)
        ids = data[idx]
        eps = torch.randn(cfg.batch, ids.shape[1], model.cfg.d, generator=g, dtype=dtype)
        use_prev = torch.rand(cfg.batch, generator=g) < 0.5 if model.cfg.self_condition else None
        result = loss(model, schedule, ids, t, eps, step=step, use_prev=use_prev)
        for group in optimizer.param_groups:
            group["lr"] = _lr_at(cfg, step)
        optimizer.zero_grad(set_to_none=True)
        result.total.backward()
        if cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        optimizer.step()
        for i, v in enumerate(result.values()):
            acc[i] += v
        count += 1
        if (step + 1) % cfg.log_every == 0 or step + 1 == cfg.steps:
            row = {"step": step + 1, "loss1": acc[0] / count, "loss2": acc[1] / count,
                   "loss3": acc[2] / count, "total": acc[3] / count}
            rows.append(row)
            if on_log:
                on_log(row)
            log.debug("step %d total %.4f ce %.4f", step + 1, row["total"], row["loss3"])
            acc = [0.0, 0.0, 0.0, 0.0]
            count = 0
    model.eval()
    return TrainResult(model, optimizer, max(start_step, cfg.steps), rows)


@torch.no_grad()
def reconstruction_accuracy(model: DiffusionModel, schedule: NoiseSchedule, seq: TokenSeq,
                            t: int = 1, draws: int = 16, seed: int = 0) -> float:
    """Token accuracy of decode(N(forward_noise(E(c), t, eps))) over ``draws`` noise draws."""
    ids = torch.tensor([seq.ids] * draws)
    g = torch.Generator().manual_seed(seed)
    eps = torch.randn(draws, seq.n, model.cfg.d, generator=g)
    x_t = forward_noise(schedule, model.embed(ids), t, eps)
    _, decoded = model.decode(model.predict_x0(x_t, t))
    return (torch.tensor([d.ids for d in decoded]) == ids).float().mean().item()


def is_finite_model(model: torch.nn.Module) -> bool:
    return all(math.isfinite(p.abs().max().item()) for p in model.parameters())
