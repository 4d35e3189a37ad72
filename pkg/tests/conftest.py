import numpy as np
import pytest
import torch

from modae.config import NetworkConfig, TrainConfig
from modae.data import SyntheticFactorSpec, synth_generate
from modae.model import ModulatedAutoencoder, PhaseState
from modae.training import ArrayDataSource, Trainer


@pytest.fixture(autouse=True)
def _seed_everything():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture
def toy_cfg():
    # 8x8 two-level toy used by the gradient suite
    return NetworkConfig(latent_dim=8, channel_schedule=(8, 8), max_level=1)


@pytest.fixture
def toy_model(toy_cfg):
    return ModulatedAutoencoder(toy_cfg)


@pytest.fixture
def small_cfg():
    return NetworkConfig(latent_dim=16, channel_schedule=(16, 16, 8, 8), max_level=3)


@pytest.fixture
def small_model(small_cfg):
    return ModulatedAutoencoder(small_cfg)


@pytest.fixture
def phase3():
    return PhaseState.stable(3)


@pytest.fixture
def synth16():
    return synth_generate(SyntheticFactorSpec(image_size=16), 64, seed=2)


@pytest.fixture
def unit_codes(small_cfg):
    z = torch.randn(6, small_cfg.latent_dim)
    return z / z.norm(dim=1, keepdim=True)


def make_trainer(seed=11, **overrides):
    net = NetworkConfig(latent_dim=16, channel_schedule=(16, 16, 8), max_level=2)
    defaults = dict(phase_budgets=(64, 64, 100_000), fade_budgets=(0, 32, 32),
                    batch_schedule=(8, 8, 8), seed=seed)
    defaults.update(overrides)
    cfg = TrainConfig(**defaults)
    ds = synth_generate(SyntheticFactorSpec(image_size=16), 64, seed=2)
    src = ArrayDataSource.from_synthetic(ds)
    torch.manual_seed(seed)
    model = ModulatedAutoencoder(net)
    return Trainer(model, net, cfg, src), net, cfg
