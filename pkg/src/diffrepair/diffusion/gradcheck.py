"""Central-difference check of autograd gradients, per parameter group."""
from __future__ import annotations

from typing import Callable

import torch

from .model import DiffusionModel


def finite_difference_report(model: DiffusionModel, f: Callable[[], torch.Tensor], probes: int = 6,
                             h: float = 1e-6, seed: int = 0, floor: float = 1e-6) -> dict[str, float]:
    """Worst relative error between autograd and (f(p+h) - f(p-h)) / 2h for each group.

    Run in float64; ``probes`` random coordinates are checked per parameter tensor.
    The denominator is at least ``floor`` so gradients that are exactly zero by
    symmetry (an attention key bias, for one) compare roundoff against roundoff
    on an absolute scale.
    """
    g = torch.Generator().manual_seed(seed)
    model.zero_grad()
    f().backward()
    worst: dict[str, float] = {}
    for group, params in model.param_groups().items():
        err = 0.0
        for _, p in params:
            flat = p.data.view(-1)
            grad = p.grad.view(-1)
            for i in torch.randperm(flat.numel(), generator=g)[:probes].tolist():
                old = flat[i].item()
                with torch.no_grad():
                    flat[i] = old + h
                    up = f().item()
                    flat[i] = old - h
                    down = f().item()
                    flat[i] = old
                numeric = (up - down) / (2 * h)
                denom = max(abs(numeric), abs(grad[i].item()), floor)
                err = max(err, abs(numeric - grad[i].item()) / denom)
        worst[group] = err
    return worst
