import numpy as np
import pytest

from mde.core import MdeConfig, fit_surface, stack


def small_data(seed=0, n=300, p=2):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    t = rng.normal(size=n) + 0.5 * X[:, 0]
    y = np.sin(t) * (1 + 0.5 * X[:, 1]) + X[:, 0] + 0.3 * rng.normal(size=n)
    return y, t, X


@pytest.fixture(scope="session")
def data():
    return small_data()


@pytest.fixture(scope="session")
def model(data):
    y, t, X = data
    return fit_surface(y, stack(t, X), config=MdeConfig())
