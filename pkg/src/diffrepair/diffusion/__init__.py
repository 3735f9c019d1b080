"""Latent diffusion over formula tokens: schedule, model, training, sampling, checkpoints."""
from .checkpoint import Checkpoint, CorruptCheckpoint, load_checkpoint, save_checkpoint
from .model import DESK, PAPER, DiffusionModel, ModelConfig, NonFinite
from .sampling import Trajectory, reverse, sample, sample_batched, sample_many
from .schedule import BadConfig, NoiseSchedule, forward_noise, make_schedule
from .train import LossResult, TrainConfig, derive_seed, encode_corpus, loss, make_optimizer, train

__all__ = [
    "BadConfig", "Checkpoint", "CorruptCheckpoint", "DESK", "DiffusionModel", "LossResult", "ModelConfig",
    "NoiseSchedule", "NonFinite", "PAPER", "TrainConfig", "Trajectory", "derive_seed", "encode_corpus",
    "forward_noise", "load_checkpoint", "loss", "make_optimizer", "make_schedule", "reverse", "sample",
    "sample_batched", "sample_many", "save_checkpoint", "train",
]
