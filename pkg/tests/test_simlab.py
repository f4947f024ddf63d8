import csv

import numpy as np
import pytest

from mde.simlab import (IV_SETTINGS, OUTCOME_SETTINGS, SimSpec, derivative_decomposition, expand_hierarchical,
                        generate, metrics, ols, run_benchmark, tsls, _surface)


@pytest.mark.parametrize("setting", OUTCOME_SETTINGS)
def test_oracle_derivative_matches_finite_difference(setting):
    d = generate(SimSpec(setting, 2000, 10, 0))
    h = 1e-6
    up, _ = _surface(setting, d.t + h, d.X, d.beta)
    dn, _ = _surface(setting, d.t, d.X, d.beta)
    fd = (up - dn) / h
    away = np.abs(np.abs(d.t) - 0.5) > 1e-3
    np.testing.assert_allclose(fd[away], d.dmu_dt[away], atol=1e-4)
    np.testing.assert_allclose(dn, d.mu, atol=1e-12)


def test_covariate_correlation():
    d = generate(SimSpec("linear", 20000, 10, 1))
    C = np.corrcoef(d.X.T)
    off = C[~np.eye(10, dtype=bool)]
    assert np.all(np.abs(off - 0.5) < 0.03)
    assert np.all(np.abs(d.X.std(axis=0) - 1) < 0.03)


@pytest.mark.parametrize("setting", OUTCOME_SETTINGS)
def test_outcome_r2_half(setting):
    d = generate(SimSpec(setting, 20000, 10, 2))
    r2 = np.var(d.mu) / np.var(d.y)
    assert abs(r2 - 0.5) < 0.05


@pytest.mark.parametrize("setting", IV_SETTINGS)
def test_iv_signal_to_noise_one(setting):
    d = generate(SimSpec(setting, 20000, 10, 3))
    assert abs(np.var(d.mu) / np.var(d.y - d.mu) - 1) < 0.1
    assert d.z is not None and d.dt_dz.shape == d.t.shape


def test_same_seed_same_draw():
    a, b = generate(SimSpec("nonlinear", 100, 8, 4)), generate(SimSpec("nonlinear", 100, 8, 4))
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(a.y, generate(SimSpec("nonlinear", 100, 8, 5)).y)


def test_spec_validation():
    for bad in (dict(setting="bogus", n=100), dict(setting="linear", n=100, p=3), dict(setting="linear", n=10)):
        with pytest.raises(ValueError):
            SimSpec(**bad)


def test_metrics_values():
    rng = np.random.default_rng(0)
    mu, d = rng.normal(size=50), rng.normal(size=50) + 1
    assert metrics(mu, d, mu, d, 0.0) == (0.0, 0.0, 0.0)
    rmse, rn, bias = metrics(mu, d, np.full(50, mu.mean()), np.zeros(50), mu.mean())
    assert rmse == pytest.approx(1.0) and rn == pytest.approx(1.0)
    assert bias == pytest.approx(abs(d.sum()) / np.sqrt((d ** 2).sum()))
    r = metrics(mu, np.zeros(50), mu, np.ones(50), 0.0)
    assert np.isnan(r[1]) and np.isnan(r[2])


def test_derivative_decomposition():
    t = np.linspace(-2, 2, 41)
    lin, non = derivative_decomposition(t, 3 - 2 * t)
    np.testing.assert_allclose(non, 0, atol=1e-12)
    lin, non = derivative_decomposition(t, t ** 2)
    np.testing.assert_allclose(lin + non, t ** 2)
    assert abs(non @ t) < 1e-10 and abs(non.sum()) < 1e-10
    with pytest.raises(ValueError):
        derivative_decomposition(np.ones(5), np.ones(5))
    with pytest.raises(ValueError):
        derivative_decomposition([1.0, 2.0], [1.0, 2.0])


def test_expand_hierarchical():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 2))
    g = rng.integers(0, 4, size=30)
    E = expand_hierarchical(X, g)
    levels = np.unique(g)
    k = levels.size
    assert E.shape == (30, k + 6)
    np.testing.assert_array_equal(E[:, :k].sum(axis=1), 1)
    np.testing.assert_array_equal(E[:, k:k + 2], X)
    HX, W = E[:, k + 2:k + 4], E[:, k + 4:]
    for lv in levels:
        rows = g == lv
        np.testing.assert_allclose(HX[rows], X[rows].mean(axis=0)[None, :].repeat(rows.sum(), 0))
        np.testing.assert_allclose(W[rows].sum(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(HX + W, X)
    with pytest.raises(ValueError):
        expand_hierarchical(X, g[:-1])


def test_ols_linear_setting_slope():
    d = generate(SimSpec("linear", 2000, 10, 0))
    assert abs(ols(d.y, d.t, d.X).deriv[0] - 1) < 0.1


def test_tsls_recovers_structural_slope():
    rng = np.random.default_rng(2)
    n = 5000
    X = rng.normal(size=(n, 2))
    z = rng.normal(size=n)
    u = rng.normal(size=n)
    t = z + u + rng.normal(size=n)
    y = 2 * t + X[:, 0] + 2 * u
    fit = tsls(y, t, z, X)
    assert fit.complies and fit.f_stat > 10
    assert abs(fit.deriv[0] - 2) < 0.1
    assert abs(ols(y, t, X).deriv[0] - 2) > 0.5
    weak = tsls(y, t, rng.normal(size=n), X)
    assert not weak.complies and np.isnan(weak.deriv).all()


def test_benchmark_deterministic_and_resumable(tmp_path):
    grid = [("linear", 200, 8), ("interactive", 200, 8)]
    a = run_benchmark(grid, methods=("ols", "null"), reps=2)
    b = run_benchmark(grid, methods=("ols", "null"), reps=2)
    key = lambda r: (r["setting"], r["rep"], r["method"], r["rmse"], r["rmse_nabla"])
    assert [key(r) for r in a] == [key(r) for r in b]
    assert all(r["rmse_nabla"] == pytest.approx(1.0) for r in a if r["method"] == "null")
    out = tmp_path / "bench.csv"
    first = run_benchmark(grid, methods=("ols",), reps=2, out_path=out)
    again = run_benchmark(grid, methods=("ols",), reps=2, out_path=out)
    assert len(first) == 4 and again == []
    with open(out) as fh:
        assert len(list(csv.DictReader(fh))) == 4


def test_benchmark_records_failures():
    def boom(draw):
        raise RuntimeError("bad cell")

    rows = run_benchmark([("linear", 100, 8)], methods=("x",), method_fns={"x": boom})
    assert rows[0]["error"].startswith("RuntimeError") and np.isnan(rows[0]["rmse"])
