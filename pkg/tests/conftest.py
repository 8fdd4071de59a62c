import numpy as np
import pytest

from levymalliavin.canonical_path import PathEnsemble, uniform_grid
from levymalliavin.levy_model import DiscreteMeasure, LevyModel, shell_partition


@pytest.fixture
def two_atom():
    model = LevyModel(0.0, 1.0, DiscreteMeasure(((0.5, 1.0), (-0.5, 1.0))), 1.0)
    return model, shell_partition(model, 3)


@pytest.fixture
def brownian_only():
    model = LevyModel(0.0, 1.0, DiscreteMeasure(()), 1.0)
    return model, shell_partition(model, 1)


@pytest.fixture
def pure_jump():
    model = LevyModel(0.0, 0.0, DiscreteMeasure(((0.5, 2.0), (-0.5, 1.0))), 1.0)
    return model, shell_partition(model, 3)


def make_block(model, partition, n=400, M=64, seed=0):
    return PathEnsemble(model, partition, uniform_grid(model.T, M), n, seed).block(0, n)


@pytest.fixture
def block(two_atom):
    return make_block(*two_atom)


def assert_mc(mean, se, target, k=4.0, floor=1e-12):
    assert abs(mean - target) <= k * se + floor, (mean, se, target)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
