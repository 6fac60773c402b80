import json

import numpy as np
import pytest

from sdprune.core.seeding import make_rng
from sdprune.schemas.config_schemas import ModelSpec
from sdprune.services.datasets import make_linear_regression, make_two_moons


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def moons():
    return make_two_moons(make_rng(7), 64, 0.1)


@pytest.fixture
def moons_spec():
    return ModelSpec(kind="mlp", layer_sizes=[2, 4, 2], activation="tanh", loss="softmax_cross_entropy")


@pytest.fixture
def overparam_lr():
    """Noise-free regression with 10 samples in 20 dimensions."""
    return make_linear_regression(make_rng(3), 10, 20)


@pytest.fixture
def write_config(tmp_path):
    def write(payload, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(payload), encoding="utf-8")
        return str(path)
    return write
