import numpy as np
import pytest
from scipy import stats

from hdabc.evaluation import METHODS, BenchmarkReport, kde2d, kl_divergence, run_table1_benchmark
from hdabc.grid import GridDensity2D


def _gaussian_grid(mx=0.0, my=0.0, n=201, lim=6.0):
    x = np.linspace(-lim, lim, n)
    return GridDensity2D(x, x, np.outer(stats.norm.pdf(x, mx), stats.norm.pdf(x, my)))


def test_kde_consistency(rng):
    truth = _gaussian_grid()
    est = kde2d(rng.standard_normal((100_000, 2)), truth)
    assert kl_divergence(truth, est) < 0.01
    assert est.integral() == pytest.approx(1.0, abs=1e-3)


def test_kde_axis_swap(rng):
    truth = _gaussian_grid()
    X = rng.standard_normal((500, 2)) * [1.0, 0.5]
    a = kde2d(X, truth)
    b = kde2d(X[:, ::-1], truth.transpose())
    np.testing.assert_allclose(b.density, a.density.T, rtol=1e-12, atol=1e-300)


def test_kde_validation(rng):
    truth = _gaussian_grid()
    with pytest.raises(ValueError):
        kde2d(rng.standard_normal((20, 2)), truth)
    with pytest.raises(ValueError):
        kde2d(np.column_stack([np.zeros(100), rng.standard_normal(100)]), truth)


def test_kl_gaussian_shift():
    x = np.linspace(-8, 9, 681)
    p = GridDensity2D(x, x, np.outer(stats.norm.pdf(x), stats.norm.pdf(x)))
    q = GridDensity2D(x, x, np.outer(stats.norm.pdf(x, 1.0), stats.norm.pdf(x)))
    assert kl_divergence(p, q) == pytest.approx(0.5, abs=0.02)


def test_kl_identity_and_nonnegativity(rng):
    p = _gaussian_grid()
    assert kl_divergence(p, p) <= 1e-9
    for _ in range(20):
        q = GridDensity2D.normalized(p.x, p.y, rng.random(p.density.shape))
        assert kl_divergence(p, q) >= 0.0


def test_kl_grid_mismatch():
    with pytest.raises(ValueError):
        kl_divergence(_gaussian_grid(n=101), _gaussian_grid(n=201))


def test_grid_validation():
    with pytest.raises(ValueError):
        GridDensity2D([0, 0, 1], [0, 1], np.ones((3, 2)))
    with pytest.raises(ValueError):
        GridDensity2D([0, 1], [0, 1], -np.ones((2, 2)))


def test_small_benchmark_is_deterministic():
    kw = dict(ps=(2, 3), methods=METHODS, replications=2, n=6000, alpha=0.05, seed=11)
    a = run_table1_benchmark(**kw)
    b = run_table1_benchmark(**kw, n_jobs=2)
    assert a.to_csv() == b.to_csv()
    assert a.failures == b.failures == []
    assert all(a.se(m, p) >= 0 for m in METHODS for p in (2, 3))
    assert a.to_csv().splitlines()[0].split(",")[:3] == ["p", "rejection", "rejection_se"]


def test_benchmark_records_cell_failures():
    # 1% of 2000 particles is too few for a kernel density estimate
    report = run_table1_benchmark(ps=(2,), methods=("rejection", "copula"), replications=1, n=2000, alpha=0.01)
    assert [f[0] for f in report.failures] == ["rejection"]
    assert np.isnan(report.mean("rejection", 2))
    assert report.values["copula"][2]


def test_benchmark_rejects_unknown_method():
    with pytest.raises(ValueError):
        run_table1_benchmark(ps=(2,), methods=("magic",), replications=1, n=100)


def test_trend_checks_and_summary(tmp_path):
    r = BenchmarkReport([2, 50], ["rejection", "regression+marginal", "copula"], 2, 10, 0.1, 0)
    r.values = {"rejection": {2: [0.1, 0.2], 50: [3.0, 3.2]},
                "regression+marginal": {2: [0.05, 0.05], 50: [0.3, 0.4]},
                "copula": {2: [0.02, 0.03], 50: [0.03, 0.04]}}
    checks = r.trend_checks()
    assert all(checks.values())
    assert set(checks) >= {"copula_below_0.15", "copula_ratio_below_2", "rejection_increasing",
                           "rejection_above_2.5_at_50", "copula_lt_regmarg_lt_rejection_at_50"}
    r.write_summary(tmp_path / "s.json")
    assert (tmp_path / "s.json").read_text().startswith("{")
