import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reskit.numcore import (FitInputError, FitProblem, gaussian_smooth, linreg_origin, lm_fit,
                            student_t_draw, student_t_quantile, weighted_mean)

x = np.linspace(0, 1, 25)


def test_lm_exact_line():
    y = 2 * x + 1
    res = lm_fit(FitProblem(lambda p: y - (p[0] * x + p[1]), 2, x.size), [0.0, 0.0])
    np.testing.assert_allclose(res.params, [2, 1], atol=1e-12)
    assert res.residual_norm < 1e-12
    assert res.dof == x.size - 2


def test_lm_gaussian_peak():
    t = np.linspace(-5, 5, 201)
    truth = np.array([3.0, 0.4, 1.3])

    def model(p):
        return p[0] * np.exp(-0.5 * ((t - p[1]) / p[2]) ** 2)

    y = model(truth)
    res = lm_fit(FitProblem(lambda p: model(p) - y, 3, t.size), [2.0, 0.0, 1.0])
    assert res.converged
    np.testing.assert_allclose(res.params, truth, rtol=1e-8)


def test_lm_underdetermined():
    with pytest.raises(FitInputError):
        FitProblem(lambda p: p, 3, 2)


def test_lm_bad_bounds():
    with pytest.raises(FitInputError):
        FitProblem(lambda p: p, 1, 2, [1.0], [0.0])


def test_lm_se_matches_covariance():
    rng = np.random.default_rng(0)
    y = 2 * x + 1 + rng.normal(0, 0.01, x.size)
    res = lm_fit(FitProblem(lambda p: y - (p[0] * x + p[1]), 2, x.size), [0.0, 0.0])
    np.testing.assert_allclose(res.standard_errors, np.sqrt(np.diag(res.covariance)))
    # OLS closed form
    A = np.vstack([x, np.ones_like(x)]).T
    s2 = res.residual_norm ** 2 / res.dof
    np.testing.assert_allclose(res.covariance, np.linalg.inv(A.T @ A) * s2, rtol=1e-6)


def test_lm_respects_bounds():
    y = -3 * x
    res = lm_fit(FitProblem(lambda p: y - p[0] * x, 1, x.size, [0.0], [10.0]), [1.0])
    assert res.params[0] == 0.0


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 5), st.floats(-2, 2), st.floats(0.3, 2))
def test_lm_recovers_own_family(amp, mu, sig):
    t = np.linspace(-6, 6, 121)

    def model(p):
        return p[0] * np.exp(-0.5 * ((t - p[1]) / p[2]) ** 2)

    y = model([amp, mu, sig])
    res = lm_fit(FitProblem(lambda p: model(p) - y, 3, t.size), [amp * 1.2, mu + 0.2, sig * 0.9])
    np.testing.assert_allclose(res.params, [amp, mu, sig], rtol=1e-6, atol=1e-9)


def test_linreg_origin_examples():
    r = linreg_origin([1, 2, 3], [3, 6, 9])
    assert r["slope"] == pytest.approx(3)
    assert r["slope_se"] == pytest.approx(0, abs=1e-15)
    assert linreg_origin([2], [4])["slope"] == 2
    rng = np.random.default_rng(5)
    xs = rng.uniform(0, 10, 50)
    ys = 5 * xs + rng.normal(size=50)
    assert linreg_origin(xs, ys)["slope"] == pytest.approx(np.sum(xs * ys) / np.sum(xs * xs), rel=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100)), min_size=2, max_size=30), st.randoms())
def test_linreg_permutation_invariant(pairs, rnd):
    xs = np.array([p[0] for p in pairs])
    if not np.any(np.abs(xs) > 1e-3):
        return
    ys = np.array([p[1] for p in pairs])
    idx = list(range(len(pairs)))
    rnd.shuffle(idx)
    a = linreg_origin(xs, ys)["slope"]
    b = linreg_origin(xs[idx], ys[idx])["slope"]
    assert b == pytest.approx(a, rel=1e-12, abs=1e-12)


def test_weighted_mean_examples():
    assert weighted_mean([1, 3], [1, 1]) == 2
    assert weighted_mean([1, 3], [1, 0]) == 1
    assert weighted_mean([2, 4, 6], [1, 2, 3]) == pytest.approx(28 / 6)
    with pytest.raises(ValueError):
        weighted_mean([1, 2], [0, 0])


def test_smooth_examples():
    c = np.full(50, 3.7)
    np.testing.assert_allclose(gaussian_smooth(c, 4), c, rtol=1e-14)
    r = np.random.default_rng(0).normal(size=40)
    np.testing.assert_array_equal(gaussian_smooth(r, 0), r)
    imp = np.zeros(101)
    imp[50] = 1
    out = gaussian_smooth(imp, 3)
    assert out.sum() == pytest.approx(1, abs=1e-12)
    k = np.exp(-0.5 * (np.arange(-12, 13) / 3.0) ** 2)
    np.testing.assert_allclose(out[38:63], k / k.sum(), atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(30, 300), st.floats(0.5, 4))
def test_smooth_length_and_mass(n, sigma):
    rng = np.random.default_rng(n)
    s = np.zeros(n + 80)
    s[40:40 + n] = rng.uniform(0, 1, n)  # zero padding keeps the mass interior
    out = gaussian_smooth(s, sigma)
    assert out.size == s.size
    assert out.sum() == pytest.approx(s.sum(), rel=1e-9)


def test_t_quantiles():
    assert student_t_quantile(10 ** 6, 0.975) == pytest.approx(1.96, abs=0.01)
    assert student_t_quantile(7, 0.5) == pytest.approx(0, abs=1e-15)
    assert student_t_quantile(1, 0.75) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        student_t_quantile(0, 0.5)


def test_t_draw_mean():
    s = student_t_draw(6, 11, size=100_000)
    assert abs(s.mean()) < 3 * s.std(ddof=1) / np.sqrt(s.size)
    np.testing.assert_array_equal(student_t_draw(6, 11, size=10), student_t_draw(6, 11, size=10))
