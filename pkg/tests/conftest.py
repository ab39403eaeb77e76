import numpy as np
import pytest

from conformal_stability import Dataset


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full-scale checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="full-scale run; pass --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_dataset(rng, n, d, integer=False):
    if integer:
        # small integer grid so ties in x and y actually occur
        X = rng.integers(0, 3, size=(n, d)).astype(float)
        y = rng.integers(0, 4, size=n).astype(float)
    else:
        X = rng.random((n, d))
        y = rng.normal(size=n)
    return Dataset(X, y)
