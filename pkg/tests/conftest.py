import warnings

import numpy as np
import pytest

from frictionchan.core import GridState, gaussian_state, make_grid
from frictionchan.distributions import gaussian_mixture_mu, gaussian_mu


def random_mixed_state(grid, rng, rank=3, x_spread=1.0, p_spread=1.0, width=0.8):
    """Random convex mixture of displaced Gaussian packets (interior-supported)."""
    w = rng.dirichlet(np.ones(rank))
    r = np.zeros((grid.n, grid.n), complex)
    for wi in w:
        x0, p0 = rng.uniform(-x_spread, x_spread), rng.uniform(-p_spread, p_spread)
        a = gaussian_state(grid, x0, p0, width).vec
        b = gaussian_state(grid, -x0, p0 / 2, width * 1.2).vec
        phase = np.exp(2j * np.pi * rng.uniform())
        v = a + 0.6 * phase * b
        v /= np.linalg.norm(v)
        r += wi * np.outer(v, v.conj())
    return GridState.from_dm(grid, r)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def grid64():
    return make_grid(64, 8.0)


@pytest.fixture(scope="session")
def grid128():
    return make_grid(128, 12.0)


@pytest.fixture(scope="session")
def mu_corpus():
    """Measurement densities used across the suite."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return {
            "gauss": gaussian_mu(1.0),
            "gauss_narrow": gaussian_mu(0.5),
            "gauss_biased": gaussian_mu(0.8, 0.3),
            "mixture": gaussian_mixture_mu([0.5, 0.5], [-0.8, 0.8], [0.5, 0.5]),
            "skewed": gaussian_mixture_mu([0.7, 0.3], [-0.3, 0.9], [0.5, 0.7]),
        }


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
