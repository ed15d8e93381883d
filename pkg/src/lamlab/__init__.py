"""Latent action model laboratory: linear LAM, PCA oracles, probe metrics and a grid-world VQ model."""

from .datagen import Batch, EnvSpec, NoiseSpec, PolicySpec, make_env, sample_batch
from .evaluator import LloReport, llo
from .linear_lam import LinearLamParams, TrainConfig, TrainResult, train
from .oracle import closed_form_A, optimal_BD, optimal_loss, pca_oracle

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "EnvSpec",
    "NoiseSpec",
    "PolicySpec",
    "make_env",
    "sample_batch",
    "LloReport",
    "llo",
    "LinearLamParams",
    "TrainConfig",
    "TrainResult",
    "train",
    "closed_form_A",
    "optimal_BD",
    "optimal_loss",
    "pca_oracle",
]
