"""Generative autoencoder whose unit-norm latent code drives per-layer
decoder statistics, enabling scale-specific mixing, conditional sampling and
attribute editing of real input images."""

from .config import LossWeights, NetworkConfig, TrainConfig
from .model import (
    Canvas,
    LatentCode,
    ModulatedAutoencoder,
    ModulationPlan,
    PhaseState,
    canvas_init,
    ema_update,
    grow,
)

__all__ = [
    "Canvas",
    "LatentCode",
    "LossWeights",
    "ModulatedAutoencoder",
    "ModulationPlan",
    "NetworkConfig",
    "PhaseState",
    "TrainConfig",
    "canvas_init",
    "ema_update",
    "grow",
]

__version__ = "0.1.0"
