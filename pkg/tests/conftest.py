import numpy as np
import pytest
import torch

from birad.codec import ToyCodec
from birad.denoiser import DenoiserConfig, build_denoiser
from birad.schedule import make_schedule


@pytest.fixture(scope="session")
def sched():
    return make_schedule()


@pytest.fixture(scope="session")
def codec():
    return ToyCodec()


# Small enough for exhaustive checks, big enough to have all three stages.
@pytest.fixture(scope="session")
def small_cfg():
    return DenoiserConfig(
        base_channels=8,
        channel_multipliers=(1, 2),
        blocks_per_stage=1,
        head_count=2,
        context_dim=8,
        latent_channels=4,
    )


@pytest.fixture(scope="session")
def small_model(small_cfg):
    return build_denoiser(small_cfg, seed=42)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


@pytest.fixture()
def torch_gen():
    return torch.Generator().manual_seed(0)
