import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def random_product_state(rng, n_sites):
    """Uniformly random normalized spinors, one per site."""
    amps = rng.normal(size=(n_sites, 2)) + 1j * rng.normal(size=(n_sites, 2))
    return amps / np.linalg.norm(amps, axis=1, keepdims=True)
