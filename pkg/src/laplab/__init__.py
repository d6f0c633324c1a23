"""Desk-scale adversarial-training laboratory."""

__version__ = "0.1.0"

from .attacks import AttackConfig, evaluate, fgsm, pgd
from .data import Dataset, augment, gen_synthetic, load_csv, load_idx
from .network import (Network, NetSpec, build, desk_cnn_spec, load_checkpoint,
                      save_checkpoint)
from .perturb import PerturbSchedule, WeightDelta, compute_nu, layer_lambda
from .trainer import (CyclicLR, PiecewiseLR, RunHistory, TrainConfig, detect_co,
                      lr_at, train, train_step)

__all__ = [
    "AttackConfig", "CyclicLR", "Dataset", "Network", "NetSpec",
    "PerturbSchedule", "PiecewiseLR", "RunHistory", "TrainConfig",
    "WeightDelta", "augment", "build", "compute_nu", "desk_cnn_spec",
    "detect_co", "evaluate", "fgsm", "gen_synthetic", "layer_lambda",
    "load_checkpoint", "load_csv", "load_idx", "lr_at", "pgd",
    "save_checkpoint", "train", "train_step",
]
