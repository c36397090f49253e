import numpy as np
import pytest

from trisdf.field import ModelConfig, SdfModel


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model():
    """A tiny learned field with non-trivial planes (fast enough for finite differences)."""
    cfg = ModelConfig(resolution=6, channels=2, levels=2, hidden=8, plane_init_std=0.3, seed=7)
    return SdfModel(cfg)
