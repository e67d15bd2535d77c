import numpy as np
import pytest

from reskit import _accel, kernels

pytestmark = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")


def test_energy_branch_paths_agree():
    q = 5e4
    d = np.linspace(-8e-5, 4e-5, 2001)
    for eps in (0.0, 1e-6, 3e-5, 6e-5):
        up_j = kernels.energy_branch_jit(d, eps, q, -1.0)
        up_n = kernels.energy_branch_numpy(d, eps, q, -1.0)
        np.testing.assert_allclose(up_j, up_n, rtol=0, atol=1e-12)
        dn = d[::-1].copy()
        np.testing.assert_allclose(kernels.energy_branch_jit(dn, eps, q, -1.0),
                                   kernels.energy_branch_numpy(dn, eps, q, -1.0), rtol=0, atol=1e-12)


def test_energy_branch_solves_cubic():
    q = 5e4
    eps = 3e-5
    d = np.linspace(-8e-5, 4e-5, 501)
    v = kernels.energy_branch_numpy(d, eps, q, -1.0)
    # v = 1/(1 + 4 q^2 y^2), y = f/f_r - 1 = (d + eps v)/(1 - eps v)
    y = (d + eps * v) / (1 - eps * v)
    np.testing.assert_allclose(v, 1 / (1 + 4 * q * q * y * y), rtol=1e-10)


def test_branch_roots_three_in_hysteresis():
    q = 5e4
    eps = 1.5 / q  # a_n0 = 1.5
    counts = [kernels.branch_roots(d, eps, q).size for d in np.linspace(-6e-5, 0, 400)]
    assert max(counts) == 3
    assert min(counts) == 1


def test_smooth_paths_agree():
    rng = np.random.default_rng(1)
    x = rng.normal(size=777)
    for sigma in (0.5, 3.0, 40.0):
        w = kernels._gauss_kernel(sigma)
        np.testing.assert_allclose(kernels.smooth_jit(x, w), kernels.smooth_numpy(x, w), atol=1e-13)


def test_unwrap_paths_agree():
    rng = np.random.default_rng(2)
    p = np.angle(np.exp(1j * np.cumsum(rng.normal(0, 1.2, 3000))))
    for up, down in ((np.pi, np.pi), (1.5 * np.pi, 1.9 * np.pi)):
        np.testing.assert_allclose(kernels.unwrap_jit(p, up, down), kernels.unwrap_numpy(p, up, down), atol=1e-12)


def test_nonlin_stats_paths_agree():
    rng = np.random.default_rng(3)
    f = np.linspace(5e9 - 5e5, 5e9 + 5e5, 301)
    z = 0.9 * np.exp(0.3j) * (1 - 0.6 / (1 + 2j * 5e4 * (f / 5e9 - 1)))
    base = np.array([0.9, 0.3, 5e4, 8e4, 5e9, 1e-5])
    rows = base * (1 + 1e-3 * rng.normal(size=(64, 6)))
    ej, aj = kernels.nonlin_stats_jit(rows, f, z.real.copy(), z.imag.copy(), 1e-13)
    en, an = kernels.nonlin_stats_numpy(rows, f, z.real.copy(), z.imag.copy(), 1e-13)
    np.testing.assert_allclose(ej, en, rtol=1e-10)
    np.testing.assert_allclose(aj, an, rtol=1e-10)
