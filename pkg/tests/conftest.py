import numpy as np
import pytest

from datagen.dataset import Dataset
from learning.kernels import KernelSpec


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the scaled experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="scaled experiment, needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


class LossModel:
    """Stand-in surrogate with prescribed per-sample losses"""

    def __init__(self, losses, input_dim=1):
        self.losses = np.asarray(losses, dtype=np.float64)
        self.spec = type("Spec", (), {"input_dim": input_dim})()

    def squared_errors(self, inputs, labels):
        return self.losses.copy()


@pytest.fixture
def three_points():
    """The 1D training set {0, 1, 3} with unit-variance densities"""
    spec = KernelSpec(1.0)
    dataset = Dataset(inputs=[[0.0], [1.0], [3.0]], labels=[[0.0], [0.0], [0.0]])
    return dataset.with_densities(spec, accelerated=False)


@pytest.fixture
def loss_model():
    return LossModel
