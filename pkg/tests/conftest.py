import numpy as np
import pytest

from fspoison.learners import Dataset


def random_dataset(rng, n, d, balanced=True):
    X = rng.random((n, d))
    if balanced:
        y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
        rng.shuffle(y)
    else:
        y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    return Dataset(X, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_ridge_data():
    # (x=0, y=0) and (x=1, y=1) are not +/-1 labels, so build them by hand
    return np.array([[0.0], [1.0]]), np.array([0.0, 1.0])


@pytest.fixture
def pm_pair():
    return Dataset([[0.0], [1.0]], [-1.0, 1.0])
