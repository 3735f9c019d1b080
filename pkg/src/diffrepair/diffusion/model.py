"""Embedding E, denoiser N, decoder D and classification head H."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..formula import DEFAULT_N, VOCAB_SIZE, TokenSeq


@dataclass(frozen=True)
class ModelConfig:
    vocab: int = VOCAB_SIZE
    n: int = DEFAULT_N
    d: int = 64
    layers_denoiser: int = 4
    layers_decoder: int = 2
    heads: int = 4
    ff_mult: int = 4
    # "rounded" snaps each x0 estimate to the embedding of its argmax tokens; "literal" does not
    sampler: str = "rounded"
    # N also reads its own previous x0 estimate (zeros when there is none)
    self_condition: bool = False

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}; expected one of {SAMPLERS}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


SAMPLERS = ("rounded", "literal")


DESK = ModelConfig()
PAPER = ModelConfig(n=128, d=512, layers_denoiser=10, layers_decoder=6, heads=8)


class Attention(nn.Module):
    def __init__(self, d: int, heads: int):
        super().__init__()
        if d % heads:
            raise ValueError("d must be divisible by heads")
        self.heads = heads
        self.q = nn.Linear(d, d)
        self.kv = nn.Linear(d, 2 * d)
        self.out = nn.Linear(d, d)

    def forward(self, x: torch.Tensor, context: Optional[torch.Tensor] = None,
                causal: bool = False, key_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        B, L, d = x.shape
        context = x if context is None else context
        h = self.heads
        q = self.q(x).view(B, L, h, d // h).transpose(1, 2)
        k, v = self.kv(context).view(B, context.shape[1], 2, h, d // h).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // h)
        if causal:
            mask = torch.ones(L, context.shape[1], dtype=torch.bool, device=x.device).triu(1)
            scores = scores.masked_fill(mask, float("-inf"))
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        attn = scores.softmax(-1)
        return self.out((attn @ v).transpose(1, 2).reshape(B, L, d))


class Block(nn.Module):
    """Pre-norm transformer block; optional causal mask and cross-attention."""

    def __init__(self, d: int, heads: int, ff_mult: int = 4, cross: bool = False):
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.attn = Attention(d, heads)
        self.cross = None
        if cross:
            self.ln_cross = nn.LayerNorm(d)
            self.cross = Attention(d, heads)
        self.ln2 = nn.LayerNorm(d)
        self.ff = nn.Sequential(nn.Linear(d, ff_mult * d), nn.GELU(), nn.Linear(ff_mult * d, d))

    def forward(self, x, memory=None, causal=False, memory_mask=None, self_mask=None):
        x = x + self.attn(self.ln1(x), causal=causal, key_mask=self_mask)
        if self.cross is not None:
            x = x + self.cross(self.ln_cross(x), context=memory, key_mask=memory_mask)
        return x + self.ff(self.ln2(x))


def sinusoidal(t: torch.Tensor, d: int) -> torch.Tensor:
    half = d // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if d % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


class Denoiser(nn.Module):
    """N: predicts x_0 from (x_t, t) with full self-attention."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d
        self.d = d
        self.pos = nn.Parameter(torch.randn(cfg.n, d) * 0.02)
        self.time = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.blocks = nn.ModuleList(Block(d, cfg.heads, cfg.ff_mult) for _ in range(cfg.layers_denoiser))
        self.ln = nn.LayerNorm(d)
        self.out = nn.Linear(d, d)
        self.cond = nn.Linear(2 * d, d) if cfg.self_condition else None

    def forward(self, x_t: torch.Tensor, t: torch.Tensor, prev: Optional[torch.Tensor] = None) -> torch.Tensor:
        temb = self.time(sinusoidal(t, self.d).to(x_t.dtype))
        if self.cond is not None:
            x_t = self.cond(torch.cat([x_t, torch.zeros_like(x_t) if prev is None else prev], dim=-1))
        h = x_t + self.pos + temb[:, None, :]
        for block in self.blocks:
            h = block(h)
        return self.out(self.ln(h))


class Decoder(nn.Module):
    """D: contextualizes the denoised embeddings with full self-attention."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d
        self.pos = nn.Parameter(torch.randn(cfg.n, d) * 0.02)
        self.blocks = nn.ModuleList(Block(d, cfg.heads, cfg.ff_mult) for _ in range(cfg.layers_decoder))
        self.ln = nn.LayerNorm(d)
        self.out = nn.Linear(d, d)

    def forward(self, x0_hat: torch.Tensor) -> torch.Tensor:
        h = x0_hat + self.pos
        for block in self.blocks:
            h = block(h)
        return self.out(self.ln(h))


class NonFinite(FloatingPointError):
    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class DiffusionModel(nn.Module):
    def __init__(self, cfg: ModelConfig = DESK):
        super().__init__()
        self.cfg = cfg
        self.E = nn.Embedding(cfg.vocab, cfg.d)
        self.N = Denoiser(cfg)
        self.D = Decoder(cfg)
        self.H = nn.Linear(cfg.d, cfg.vocab)

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        return self.E(ids)

    def predict_x0(self, x_t: torch.Tensor, t, prev: Optional[torch.Tensor] = None) -> torch.Tensor:
        t = torch.as_tensor(t)
        if t.dim() == 0:
            t = t.expand(x_t.shape[0])
        return self.N(x_t, t, prev)

    def logits(self, x0_hat: torch.Tensor) -> torch.Tensor:
        return self.H(self.D(x0_hat))

    def loss_parts(self, ids: torch.Tensor, x_t_fn, t: torch.Tensor, use_prev: Optional[torch.Tensor] = None):
        """The three training terms for a batch of token ids.

        ``x_t_fn`` maps the clean embeddings to their noised version, so the
        caller owns the noise draw. With self-conditioning, rows flagged in
        ``use_prev`` first get a gradient-free estimate that is fed back in.
        """
        x0 = self.E(ids)
        x_t = x_t_fn(x0)
        prev = None
        if self.cfg.self_condition and use_prev is not None and bool(use_prev.any()):
            with torch.no_grad():
                prev = self.N(x_t, t) * use_prev[:, None, None].to(x_t.dtype)
        x0_hat = self.N(x_t, t, prev)
        decoded = self.D(x0_hat)
        l_denoise = (x0_hat - x0).pow(2).mean()
        l_decode = (decoded - x0).pow(2).mean()
        l_ce = F.cross_entropy(self.H(decoded).reshape(-1, self.cfg.vocab), ids.reshape(-1))
        return l_denoise, l_decode, l_ce

    @torch.no_grad()
    def decode(self, x0_hat: torch.Tensor) -> tuple[torch.Tensor, list[TokenSeq]]:
        """Per-position argmax of H(D(x0_hat)), truncated at the first EOS."""
        single = x0_hat.dim() == 2
        if single:
            x0_hat = x0_hat[None]
        logits = self.logits(x0_hat)
        seqs = [TokenSeq.from_argmax(row.tolist()) for row in logits.argmax(-1)]
        return (logits[0], seqs[0]) if single else (logits, seqs)

    def round_to_tokens(self, x0_hat: torch.Tensor) -> torch.Tensor:
        return self.E(self.logits(x0_hat).argmax(-1))

    def param_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        groups: dict[str, list] = {"E": [], "N": [], "D": [], "H": []}
        for name, p in self.named_parameters():
            groups[name.split(".")[0]].append((name, p))
        return groups
