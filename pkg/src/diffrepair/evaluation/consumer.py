"""A small encoder-decoder repair model trained on (broken, fixed) pairs, and a copy-input baseline."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..diffusion.checkpoint import CorruptCheckpoint, read_tensor_file, write_tensor_file
from ..diffusion.model import Block, NonFinite
from ..diffusion.train import derive_seed
from ..formula import DEFAULT_N, EOS_ID, PAD_ID, VOCAB_SIZE, TokenSeq, TooLong, detokenize, tokenize

START_ID = PAD_ID  # the decoder is primed with PAD, which never appears before EOS in targets


@dataclass(frozen=True)
class ConsumerConfig:
    vocab: int = VOCAB_SIZE
    n: int = DEFAULT_N
    d: int = 64
    layers_encoder: int = 2
    layers_decoder: int = 2
    heads: int = 4
    ff_mult: int = 4
    steps: int = 2000
    batch: int = 64
    lr: float = 1e-3
    seed: int = 0
    grad_clip: float = 1.0

    def to_json(self) -> dict:
        return asdict(self)


class ConsumerModel(nn.Module):
    def __init__(self, cfg: ConsumerConfig = ConsumerConfig()):
        super().__init__()
        self.cfg = cfg
        d = cfg.d
        self.embed = nn.Embedding(cfg.vocab, d)
        self.pos_enc = nn.Parameter(torch.randn(cfg.n, d) * 0.02)
        self.pos_dec = nn.Parameter(torch.randn(cfg.n, d) * 0.02)
        self.encoder = nn.ModuleList(Block(d, cfg.heads, cfg.ff_mult) for _ in range(cfg.layers_encoder))
        self.decoder = nn.ModuleList(Block(d, cfg.heads, cfg.ff_mult, cross=True) for _ in range(cfg.layers_decoder))
        self.ln_enc = nn.LayerNorm(d)
        self.ln_dec = nn.LayerNorm(d)
        self.head = nn.Linear(d, cfg.vocab)

    def encode(self, src: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        mask = _content_mask(src)
        h = self.embed(src) + self.pos_enc[: src.shape[1]]
        for block in self.encoder:
            h = block(h, self_mask=mask)
        return self.ln_enc(h), mask

    def decode_logits(self, memory, memory_mask, prefix: torch.Tensor) -> torch.Tensor:
        h = self.embed(prefix) + self.pos_dec[: prefix.shape[1]]
        for block in self.decoder:
            h = block(h, memory=memory, causal=True, memory_mask=memory_mask)
        return self.head(self.ln_dec(h))

    def forward(self, src: torch.Tensor, tgt: torch.Tensor) -> torch.Tensor:
        """Teacher-forced logits for every target position."""
        memory, mask = self.encode(src)
        prefix = torch.cat([torch.full_like(tgt[:, :1], START_ID), tgt[:, :-1]], dim=1)
        return self.decode_logits(memory, mask, prefix)

    @torch.no_grad()
    def greedy(self, src: torch.Tensor) -> list[TokenSeq]:
        memory, mask = self.encode(src)
        B, n = src.shape
        out = torch.full((B, 1), START_ID, dtype=torch.long)
        done = torch.zeros(B, dtype=torch.bool)
        for _ in range(n):
            nxt = self.decode_logits(memory, mask, out)[:, -1].argmax(-1)
            nxt = torch.where(done, torch.full_like(nxt, PAD_ID), nxt)
            out = torch.cat([out, nxt[:, None]], dim=1)
            done |= nxt == EOS_ID
            if bool(done.all()):
                break
        rows = out[:, 1:].tolist()
        return [TokenSeq.from_argmax(r + [PAD_ID] * (n - len(r))) for r in rows]


def _content_mask(ids: torch.Tensor) -> torch.Tensor:
    """True for content tokens and the EOS; PAD keys are masked out."""
    mask = ids != PAD_ID
    mask[:, 0] = True  # never mask a whole row
    return mask


def target_loss(model: ConsumerModel, src: torch.Tensor, tgt: torch.Tensor) -> torch.Tensor:
    logits = model(src, tgt)
    # score positions up to and including the EOS
    keep = torch.cumsum((tgt == EOS_ID).long(), dim=1) - (tgt == EOS_ID).long() == 0
    return F.cross_entropy(logits[keep], tgt[keep])


def encode_pairs(pairs: Sequence, n: int) -> tuple[torch.Tensor, torch.Tensor]:
    src, tgt = [], []
    for p in pairs:
        try:
            s, t = tokenize(p.broken, n), tokenize(p.fixed, n)
        except TooLong:
            continue
        src.append(s.ids)
        tgt.append(t.ids)
    if not src:
        raise ValueError("no pairs fit in n tokens")
    return torch.tensor(src), torch.tensor(tgt)


def finetune_consumer(pairs: Sequence, cfg: ConsumerConfig = ConsumerConfig(),
                      on_log: Optional[Callable[[dict], None]] = None, log_every: int = 100) -> ConsumerModel:
    """Cross-entropy training on broken -> fixed; batches and init derive from ``cfg.seed``."""
    if not pairs:
        raise ValueError("no pairs to train on")
    torch.manual_seed(derive_seed(cfg.seed, "consumer-init"))
    model = ConsumerModel(cfg)
    src, tgt = encode_pairs(pairs, cfg.n)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    model.train()
    for step in range(cfg.steps):
        g = torch.Generator().manual_seed(derive_seed(cfg.seed, "consumer", step))
        idx = torch.randint(len(src), (min(cfg.batch, len(src)),), generator=g)
        loss = target_loss(model, src[idx], tgt[idx])
        if not torch.isfinite(loss):
            raise NonFinite(f"consumer loss {loss.item()}", step)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        if cfg.grad_clip:
            nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        opt.step()
        if on_log and ((step + 1) % log_every == 0 or step + 1 == cfg.steps):
            on_log({"step": step + 1, "loss": loss.item()})
    model.eval()
    return model


def consumer_repair(model: ConsumerModel, brokens: Sequence[str], batch: int = 256) -> list[str]:
    out: list[str] = []
    for i in range(0, len(brokens), batch):
        chunk = brokens[i:i + batch]
        src = torch.tensor([tokenize(b, model.cfg.n).ids for b in chunk])
        out.extend(detokenize(s) for s in model.greedy(src))
    return out


def copy_baseline(brokens: Sequence[str]) -> list[str]:
    return list(brokens)


def save_consumer(model: ConsumerModel, path, extra: Optional[dict] = None) -> None:
    header = {"kind": "consumer", "config": model.cfg.to_json(), "extra": extra or {}}
    write_tensor_file(path, header, ((k, v.detach().numpy()) for k, v in model.state_dict().items()))


def load_consumer(path) -> ConsumerModel:
    header, tensors = read_tensor_file(path)
    if header.get("kind") != "consumer":
        raise CorruptCheckpoint(f"{path}: not a consumer checkpoint")
    model = ConsumerModel(ConsumerConfig(**header["config"]))
    model.load_state_dict(tensors)
    model.eval()
    return model
