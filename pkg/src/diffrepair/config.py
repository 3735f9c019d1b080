"""Experiment configuration: flat dotted keys in a YAML file, overridden by command-line flags."""
from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .diffusion.model import ModelConfig
from .diffusion.train import TrainConfig
from .evaluation.consumer import ConsumerConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "model.d": 64,
    "model.n": 48,
    "model.layers_denoiser": 4,
    "model.layers_decoder": 2,
    "model.heads": 4,
    "model.T": 200,
    "model.schedule": "linear",
    "model.sampler": "rounded",
    "model.self_condition": True,
    "train.steps": 8000,
    "train.batch": 64,
    "train.lr": 1e-3,
    "train.warmup": 200,
    "train.decay": "none",
    "train.grad_clip": 1.0,
    "train.log_every": 100,
    "corpus.n": 2000,
    "corpus.depth": 3,
    "bench.n": 200,
    "bench.grids": 2,
    "repair.levels": list(range(10, 101, 10)),
    "repair.seeds_per_level": 3,
    "repair.oracle": "exec_dist",
    "repair.pools": ["any", "best", "vote"],
    "gen.n_pairs": 5000,
    "gen.snapshot_stride": 10,
    "consumer.steps": 2000,
    "consumer.batch": 64,
    "consumer.lr": 1e-3,
    "paths.corpus": "corpus.jsonl",
    "paths.checkpoint": "model.ckpt",
    "paths.benchmark": "bench.jsonl",
    "paths.out": ".",
}


CHOICES = {
    "model.schedule": ("linear", "sqrt"),
    "model.sampler": ("rounded", "literal"),
    "repair.oracle": ("exec", "exec_dist", "bifi", "sketch"),
    "train.decay": ("none", "cosine"),
}


def _check(key: str, value: Any) -> Any:
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    if key in CHOICES and value not in CHOICES[key]:
        raise ConfigError(f"{key} must be one of {CHOICES[key]}, got {value!r}")
    default = DEFAULTS[key]
    if value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    try:
        if isinstance(default, int) and not isinstance(default, bool):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            if not isinstance(value, list):
                raise ValueError
            return value
        if isinstance(default, str):
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return value


def load_config(path: Optional[str | Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> dict:
    cfg = dict(DEFAULTS)
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except yaml.YAMLError as err:
            raise ConfigError(f"config file {path}: {err}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must be a mapping of dotted keys")
        for key, value in raw.items():
            cfg[key] = _check(str(key), value)
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = _check(key, value)
    return cfg


def dump_config(cfg: Mapping[str, Any]) -> str:
    return yaml.safe_dump(dict(cfg), sort_keys=True, default_flow_style=None)


def model_config(cfg: Mapping[str, Any]) -> ModelConfig:
    return ModelConfig(n=cfg["model.n"], d=cfg["model.d"], layers_denoiser=cfg["model.layers_denoiser"],
                       layers_decoder=cfg["model.layers_decoder"], heads=cfg["model.heads"],
                       sampler=cfg["model.sampler"], self_condition=cfg["model.self_condition"])


def train_config(cfg: Mapping[str, Any]) -> TrainConfig:
    return TrainConfig(steps=cfg["train.steps"], batch=cfg["train.batch"], lr=cfg["train.lr"],
                       seed=cfg["seed"], grad_clip=cfg["train.grad_clip"], log_every=cfg["train.log_every"],
                       warmup=cfg["train.warmup"], decay=cfg["train.decay"])


def consumer_config(cfg: Mapping[str, Any]) -> ConsumerConfig:
    return ConsumerConfig(n=cfg["model.n"], d=cfg["model.d"], heads=cfg["model.heads"],
                          steps=cfg["consumer.steps"], batch=cfg["consumer.batch"], lr=cfg["consumer.lr"],
                          seed=cfg["seed"])


def parse_levels(text: str) -> list[float]:
    """'10..100' (step 10), '10..100:5', or a comma list like '10,20,50'."""
    text = text.strip()
    try:
        if ".." in text:
            span, _, step = text.partition(":")
            lo, hi = (float(x) for x in span.split(".."))
            step_v = float(step) if step else 10.0
            if step_v <= 0 or hi < lo:
                raise ValueError
            out, v = [], lo
            while v <= hi + 1e-9:
                out.append(v)
                v += step_v
        else:
            out = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad level list {text!r}") from None
    if not out or any(not 0 <= v <= 100 for v in out):
        raise ConfigError(f"levels must be percentages in [0, 100]: {text!r}")
    return [int(v) if float(v).is_integer() else v for v in out]
