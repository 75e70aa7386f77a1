import numpy as np
import pytest

from drgaze import synth_generate, train
from helpers import TINY_RESOLUTION, tiny_config


@pytest.fixture(scope="session")
def tiny_dataset():
    return synth_generate(3, 8, resolution=TINY_RESOLUTION, seed=11)


@pytest.fixture(scope="session")
def trained_tiny(tiny_dataset):
    """A short real training run shared by tests that need non-degenerate weights."""
    cfg = tiny_config(epochs=3)
    model, history = train(cfg, tiny_dataset)
    return model, history, cfg


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
