import numpy as np
import pytest

from mumoe import model

FIXTURE_DIR = __file__.rsplit("/", 1)[0] + "/fixtures"


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_config():
    return model.ModelConfig(n_layers=2, n_heads=4, hidden=64, head_dim=16,
                             ffn_dim=256, vocab=256, max_seq=128)


@pytest.fixture(scope="session")
def tiny_model(tiny_config):
    """Random-weight byte-level model, shared read-only across tests."""
    return model.random_model(tiny_config, seed=7)


def random_f32(rng, *shape, scale=1.0):
    return (rng.standard_normal(shape) * scale).astype(np.float32)
