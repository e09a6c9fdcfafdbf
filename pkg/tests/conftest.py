import numpy as np
import pytest

from vit_surgeon.model import ModelConfig, generate_synthetic

# 2 blocks, width 8, 2 heads, patch 4 on an 8x8 input -> 5 tokens (1 CLS + 4 patches)
TINY = ModelConfig(layers=2, width=8, heads=2, patch=4, image_size=8, embed_dim=4)


@pytest.fixture(scope="session")
def tiny_config():
    return TINY


@pytest.fixture(scope="session")
def tiny_bundle():
    return generate_synthetic(TINY, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_image():
    return np.random.default_rng(7).standard_normal((3, 8, 8)).astype(np.float32)
