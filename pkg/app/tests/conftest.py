"""
Shared fixtures for the DeepNTK test suite
"""

import numpy as np
import pytest

from app.core.geometry import RawDataset, project_canonical, synthetic_dataset


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="Run the minutes-long finite-width checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def box_data():
    """Data of the depth experiment: uniform box, canonically projected"""
    def make(n, n0=128, seed=0):
        return project_canonical(synthetic_dataset(n, n0, seed))
    return make


@pytest.fixture
def gaussian_data():
    """Sphere data with inner products of both signs"""
    def make(n, n0=8, seed=0):
        rng = np.random.default_rng(seed)
        return project_canonical(RawDataset(rng.standard_normal((n, n0)), rng.standard_normal(n)))
    return make
