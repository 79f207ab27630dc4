import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_adjacency(rng, n, density=0.4, weighted=True):
    a = (rng.random((n, n)) < density).astype(float)
    a = np.triu(a, 1)
    if weighted:
        a *= rng.uniform(0.1, 1.0, size=(n, n))
    return a + a.T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
