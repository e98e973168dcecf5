import numpy as np
import pytest

from seaclear.tensor import Rng


@pytest.fixture
def rng():
    return Rng(0)


@pytest.fixture
def np_rng():
    return np.random.default_rng(0)


def rand_image(np_rng, shape=(3, 16, 16), lo=0.0, hi=1.0, dtype=np.float32):
    return np_rng.uniform(lo, hi, shape).astype(dtype)
