import numpy as np
import pytest

from laguerre_flow.geometry import Domain


@pytest.fixture(scope="session")
def unit_square():
    return Domain.unit_square()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)


def random_instance(rng, n, domain, mode="full", weight_scale=0.05):
    """Random positions away from the boundary plus moderate weights."""
    lo = domain.vertices.min(axis=0)
    hi = domain.vertices.max(axis=0)
    positions = lo + (hi - lo) * (0.1 + 0.8 * rng.random((n, 2)))
    if mode == "clipped":
        weights = 0.02 + weight_scale * rng.random(n)
    else:
        weights = weight_scale * (rng.random(n) - 0.5)
    return positions, weights
