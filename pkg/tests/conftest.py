"""Shared fixtures and the finite-difference gradient harness."""

from __future__ import annotations

import numpy as np
import pytest

from contactforge.dataset import SyntheticConfig, generate_synthetic
from contactforge.mesh import build_level_regressors, make_proxy_mesh

FD_STEP = 1e-5
FD_ATOL = 1e-10  # central-difference roundoff floor (~eps * |f| / h)


def fd_gradient(f, z, coords=None, h=FD_STEP):
    """Central finite differences of a scalar function of the logits."""
    z = np.asarray(z, dtype=np.float64)
    coords = range(len(z)) if coords is None else coords
    grad = {}
    for i in coords:
        zp = z.copy()
        zp[i] += h
        zm = z.copy()
        zm[i] -= h
        grad[i] = (f(zp) - f(zm)) / (2.0 * h)
    return grad


def assert_grad_matches(value_fn, analytic, z, rtol, coords=None, label=""):
    """Check analytic gradient entries against central differences.

    Passes when |analytic - fd| <= rtol * max(|analytic|, |fd|) + FD_ATOL.
    """
    fd = fd_gradient(value_fn, z, coords=coords)
    for i, g_fd in fd.items():
        g_an = analytic[i]
        tol = rtol * max(abs(g_an), abs(g_fd)) + FD_ATOL
        assert abs(g_an - g_fd) <= tol, (
            f"{label} coord {i}: analytic {g_an!r} vs fd {g_fd!r} (tol {tol:.3e})"
        )


@pytest.fixture(scope="session")
def proxy2():
    return make_proxy_mesh(2)


@pytest.fixture(scope="session")
def topo162(proxy2):
    return proxy2.topology


@pytest.fixture(scope="session")
def regressors162(topo162):
    return build_level_regressors(topo162, [162, 84, 21])


@pytest.fixture(scope="session")
def bench_small():
    """Reduced benchmark for fast unit tests."""
    return generate_synthetic(SyntheticConfig(n_samples=400, seed=11))


@pytest.fixture(scope="session")
def bench_full():
    """Full acceptance-scale benchmark, seed 1."""
    return generate_synthetic(SyntheticConfig(seed=1))
