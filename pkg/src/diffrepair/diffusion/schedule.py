"""Noise schedules and the closed-form forward process."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch


class BadConfig(ValueError):
    pass


def cumulative_alpha(beta) -> np.ndarray:
    """alpha_bar_t = prod_{i<=t} (1 - beta_i), for t = 1..T."""
    return np.cumprod(1.0 - np.asarray(beta, dtype=np.float64))


@dataclass(frozen=True)
class NoiseSchedule:
    """``beta[t - 1]`` is the noise added at step t; ``alpha_bar[t]`` is the
    cumulative product up to t, with ``alpha_bar[0] == 1``."""

    kind: str
    beta: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    @classmethod
    def from_betas(cls, beta, kind: str = "custom", check: bool = True) -> "NoiseSchedule":
        beta = np.asarray(beta, dtype=np.float64)
        if beta.ndim != 1 or len(beta) < 2:
            raise BadConfig("need at least 2 steps")
        alpha_bar = np.concatenate([[1.0], cumulative_alpha(beta)])
        if check:
            if not np.all((beta > 0) & (beta < 1)):
                raise BadConfig("every beta must lie in (0, 1)")
            if not np.all(np.diff(alpha_bar) < 0):
                raise BadConfig("alpha_bar must be strictly decreasing")
            if alpha_bar[-1] >= 0.01:
                raise BadConfig(f"terminal alpha_bar {alpha_bar[-1]:.4g} >= 0.01: x_T is not near-Gaussian")
        return cls(kind, beta, alpha_bar)

    def signal(self, t) -> torch.Tensor:
        return torch.as_tensor(np.sqrt(self.alpha_bar[np.asarray(t)]))

    def noise(self, t) -> torch.Tensor:
        return torch.as_tensor(np.sqrt(1.0 - self.alpha_bar[np.asarray(t)]))

    def step_for_percent(self, pct: float) -> int:
        return int(round(pct * self.T / 100.0))

    def to_json(self) -> dict:
        return {"kind": self.kind, "beta": self.beta.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "NoiseSchedule":
        return cls.from_betas(obj["beta"], obj.get("kind", "custom"))


def linear_betas(T: int, beta_start: float = 1e-4, beta_end: float = 0.02, rescale: bool = True,
                 max_beta: float = 0.999) -> np.ndarray:
    # endpoints are stated for T=1000; rescaling keeps the terminal alpha_bar comparable for other T
    if not rescale:
        return np.linspace(beta_start, beta_end, T, dtype=np.float64)
    scale = 1000.0 / T
    return np.minimum(np.linspace(beta_start * scale, beta_end * scale, T, dtype=np.float64), max_beta)


def sqrt_betas(T: int, s: float = 1e-4, max_beta: float = 0.999) -> np.ndarray:
    def f(u):
        return 1.0 - math.sqrt(u + s)

    return np.array([min(1.0 - f((i + 1) / T) / f(i / T), max_beta) if f((i + 1) / T) > 0 else max_beta
                     for i in range(T)], dtype=np.float64)


def make_schedule(T: int, kind: str = "linear") -> NoiseSchedule:
    if T < 2:
        raise BadConfig("T must be >= 2")
    if kind == "linear":
        beta = linear_betas(T)
    elif kind == "sqrt":
        beta = sqrt_betas(T)
    else:
        raise BadConfig(f"unknown schedule kind {kind!r}")
    return NoiseSchedule.from_betas(beta, kind)


def _bcast(v: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    v = v.to(like.dtype)
    return v.reshape(v.shape + (1,) * (like.dim() - v.dim()))


def forward_noise(schedule: NoiseSchedule, x0: torch.Tensor, t, eps: torch.Tensor) -> torch.Tensor:
    """x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps.

    ``t`` is an int or a per-batch integer tensor; inputs are not modified.
    """
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} != x0 shape {tuple(x0.shape)}")
    t = torch.as_tensor(t).cpu().numpy()
    return _bcast(schedule.signal(t), x0) * x0 + _bcast(schedule.noise(t), x0) * eps
