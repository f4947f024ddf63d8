import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize

from mde import lassoplus as lp


def quad_mean(a, gamma):
    """Independent oracle: adaptive quadrature of the weight posterior mean."""
    top = integrate.quad(lambda w: w * math.exp(-w ** gamma - a * w), 0, np.inf, limit=400)[0]
    bot = integrate.quad(lambda w: math.exp(-w ** gamma - a * w), 0, np.inf, limit=400)[0]
    return top / bot


def test_weight_mean_closed_forms():
    assert abs(lp.weight_posterior_mean(0.0, 1.0, 1.0, 1.0) - 1.0) < 1e-10
    assert abs(lp.weight_posterior_mean(0.0, 1.0, 1.0, 2.0) - 1 / math.sqrt(math.pi)) < 1e-10
    g = 0.7
    expect = math.gamma(2 / g) / math.gamma(1 / g)
    assert abs(lp.weight_posterior_mean(0.0, 1.0, 1.0, g) - expect) < 1e-8 * expect


@given(st.floats(1e-3, 200.0), st.floats(0.05, 8.0))
@settings(max_examples=80, deadline=None)
def test_weight_mean_matches_adaptive_quadrature(a, gamma):
    got = lp.weight_posterior_mean(a, 1.0, 1.0, gamma)
    ref = quad_mean(a, gamma)
    assert abs(got - ref) <= 1e-6 * ref


def test_weight_mean_monotone():
    vals = lp.weight_posterior_mean(np.array([0.0, 0.1, 1.0, 10.0]), 3.0, 1.5, 1.3)
    assert np.all(np.diff(vals) < 0)
    assert lp.weight_posterior_mean(10.0, 2, 1, 1.5) < lp.weight_posterior_mean(1.0, 2, 1, 1.5)


def test_spike_and_slab_limit_penalty_flat():
    lam, sigma = 10.0, 1.0
    c = np.linspace(0.5, 5, 10)
    pen = lam * lp.weight_posterior_mean(c, lam, sigma, 1e-3) * c / sigma
    assert (pen.max() - pen.min()) / pen.mean() < 0.01


def test_lambda_prior_boundaries():
    with pytest.warns(lp.ImproperPriorWarning):
        assert math.isnan(lp.lambda_growth_check(100, 1979))
    assert lp.lambda_prior_shape(100, 1979) < 0 < lp.lambda_prior_shape(100, 1978)
    assert math.isfinite(lp.lambda_growth_check(1000, 27338))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        lp.lambda_growth_check(1000, 27338)


def test_lambda_growth_rate():
    n = 10 ** 8
    ratio = lp.lambda_growth_check(4 * n, 4 * n) / lp.lambda_growth_check(n, n)
    assert abs(ratio - 2) < 0.1


def _problem(seed, n=40, K=8):
    rng = np.random.default_rng(seed)
    R = rng.normal(size=(n, K))
    y = R[:, 0] - 2 * R[:, 1] + rng.normal(size=n)
    return R.T @ R, R.T @ y, float(y @ y), rng.uniform(0.5, 20, K)


@given(st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_sweep_never_increases_objective(seed):
    G, b, yy, thr = _problem(seed)
    c = np.zeros(len(b))
    obj = lambda c: 0.5 * (yy - 2 * b @ c + c @ G @ c) + thr @ np.abs(c)
    prev = obj(c)
    for _ in range(20):
        c = lp.coordinate_sweep(G, b, c, thr)
        cur = obj(c)
        assert cur <= prev + 1e-10
        prev = cur


def test_orthonormal_soft_threshold():
    rng = np.random.default_rng(1)
    Q, _ = np.linalg.qr(rng.normal(size=(50, 6)))
    y = rng.normal(size=50) * 3
    b = Q.T @ y
    thr = np.full(6, 1.0)
    c = lp.solve_weighted_lasso(Q.T @ Q, b, thr)
    expect = np.sign(b) * np.maximum(np.abs(b) - thr, 0)
    np.testing.assert_allclose(c, expect, atol=1e-10)


def test_weighted_lasso_matches_split_variable_oracle():
    G, b, yy, thr = _problem(3)
    c = lp.solve_weighted_lasso(G, b, thr, tol=1e-14)
    K = len(b)

    def f(uv):
        u, v = uv[:K], uv[K:]
        x = u - v
        return 0.5 * x @ G @ x - b @ x + thr @ (u + v), np.r_[G @ x - b + thr, -(G @ x - b) + thr]

    res = optimize.minimize(f, np.zeros(2 * K), jac=True, method="L-BFGS-B",
                            bounds=[(0, None)] * (2 * K), options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10000})
    ref = res.x[:K] - res.x[K:]
    np.testing.assert_allclose(c, ref, atol=1e-5)


def test_zero_design():
    y = np.arange(10.0)
    fit = lp.fit(np.zeros((10, 4)), y)
    assert np.all(fit.c == 0) and fit.mu_y == y.mean() and fit.support.size == 0


def test_non_finite_y_rejected():
    with pytest.raises(ValueError):
        lp.fit(np.ones((10, 2)), np.r_[np.nan, np.ones(9)])


def test_noise_design_mostly_empty():
    empty = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        fit = lp.fit(rng.normal(size=(500, 50)), rng.normal(size=500))
        empty += fit.support.size == 0
    assert empty >= 9


def single_signal(seed=0, n=200, beta=5.0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    x = (x - x.mean()) / x.std()
    y = beta * x + rng.normal(size=n)
    return x, y


def map_grid_argmin(x, y, lam, w, sigma):
    """Brute-force minimiser of RSS/(2 sigma^2) + lam w |c| / sigma by nested grids."""
    yc = y - y.mean()
    obj = lambda c: np.sum((yc[None, :] - c[:, None] * x[None, :]) ** 2, axis=1) / (2 * sigma ** 2) \
        + lam * w * np.abs(c) / sigma
    lo, hi = -20.0, 20.0
    for _ in range(6):
        grid = np.linspace(lo, hi, 2001)
        k = int(np.argmin(obj(grid)))
        step = grid[1] - grid[0]
        lo, hi = grid[max(k - 2, 0)], grid[min(k + 2, 2000)]
    return grid[k], step


def test_single_signal_matches_map_grid():
    x, y = single_signal()
    fit = lp.fit(x[:, None], y, lp.LassoPlusConfig(tol=1e-13, max_iter=5000))
    ref, step = map_grid_argmin(x, y, fit.lam, fit.w[0], fit.sigma)
    assert step < 1e-6
    assert abs(fit.c[0] - ref) < 1e-6
    ols = x @ (y - y.mean()) / (x @ x)
    assert abs(fit.c[0] - ols) <= fit.lam * fit.w[0] * fit.sigma / (x @ x) + 1e-9


def test_refit_bitwise_identical():
    rng = np.random.default_rng(5)
    R = rng.normal(size=(100, 20))
    y = R[:, 0] + rng.normal(size=100)
    a, b = lp.fit(R, y), lp.fit(R, y)
    np.testing.assert_array_equal(a.c, b.c)
    assert a.lam == b.lam and a.gamma == b.gamma and a.sigma2 == b.sigma2


def test_fit_invariants():
    rng = np.random.default_rng(6)
    R = rng.normal(size=(200, 30))
    y = 2 * R[:, 0] - R[:, 5] + rng.normal(size=200)
    fit = lp.fit(R, y)
    assert set(fit.support) == {0, 5}
    assert np.all(fit.w > 0) and fit.gamma > 0 and fit.sigma2 > 0 and fit.lam > 0
    assert np.all(np.isfinite(fit.objective_trace)) and fit.converged
    resid = y - np.array([lp.predict_linear(fit, r) for r in R - R.mean(axis=0)])
    assert abs(resid.mean()) < 1e-10


def test_predict_linear():
    fit = lp.LassoPlusFit(np.array([0.0, 2.0]), 1.5, 1.0, np.ones(2), 1.0, 1.0, np.array([1]))
    assert lp.predict_linear(fit, [0, 0]) == 1.5
    assert lp.predict_linear(fit, [0, 1]) == 3.5
    with pytest.raises(ValueError):
        lp.predict_linear(fit, [1, 2, 3])


def test_config_validation():
    with pytest.raises(ValueError):
        lp.LassoPlusConfig(rho=0)
    with pytest.raises(ValueError):
        lp.LassoPlusConfig(tol=-1)
    with pytest.raises(ValueError):
        lp.LassoPlusConfig(sigma_dof="some")


def test_sigma_mode_counts():
    rng = np.random.default_rng(9)
    R = rng.normal(size=(200, 150))
    y = R[:, 0] + rng.normal(size=200)
    active = lp.fit(R, y, lp.LassoPlusConfig(sigma_dof="active"))
    full = lp.fit(R, y)
    resid = y - y.mean() - (R - R.mean(axis=0)) @ active.c
    # at the mode sigma solves nu sigma^2 - B sigma - rss = 0 with nu = n + |S| + 2
    nu = 200 + active.support.size + 2
    B = active.lam * np.sum(active.w * np.abs(active.c * (R - R.mean(axis=0)).std(axis=0)))
    s = active.sigma
    assert abs(nu * s * s - B * s - resid @ resid) < 1e-3 * (resid @ resid)
    assert full.sigma < active.sigma
