import numpy as np
import pytest
import torch

from classwise_adapt.data import Domain, DomainShift, ToySceneConfig, generate_toy_sample


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(2)


@pytest.fixture
def toy_cfg():
    return ToySceneConfig(seed=11)


@pytest.fixture
def toy_sample(toy_cfg):
    return generate_toy_sample(toy_cfg, Domain.SYNTHETIC, 0)


def strong_gap_cfg(seed: int = 0, canvas: int = 48) -> ToySceneConfig:
    """Toy config with a pronounced appearance gap, used by the adaptation
    and separability tests."""
    return ToySceneConfig(
        height=canvas,
        width=canvas,
        seed=seed,
        shift=DomainShift(
            hue_rotation_deg=45.0,
            brightness_scale=0.75,
            noise_sigma=0.06,
            texture_amplitude=0.05,
        ),
    )


def make_rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)
