import numpy as np
import pytest

from spde_lab.domain import DomainSpec, build_grid
from spde_lab.fields import coefficients_from_dict
from spde_lab.noise import TimeGrid, sample_wiener_bundle


@pytest.fixture
def unit_interval():
    return build_grid(DomainSpec.interval(0.0, 1.0), 32)


def make_coeffs(n=1, **kw):
    return coefficients_from_dict(kw, n)


def bundle(seed, modes, t_end, steps):
    return sample_wiener_bundle(seed, modes, TimeGrid(t_end, steps))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
