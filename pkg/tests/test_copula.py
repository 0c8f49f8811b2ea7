import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.integrate import trapezoid

from conftest import NormalMeanModel
from hdabc.core import RngStream, generate_particles
from hdabc.copula import (CorrelationMatrix, GaussianCopulaABC, GridMargin, MetaGaussian, ParametricMargin,
                          copula_abc, fit_margin_kde, meta_gaussian_logdensity, nearest_correlation,
                          normal_scores_correlation, sample_meta_gaussian, silverman_bandwidth)
from hdabc.rejection import KernelConfig, rejection_abc, standardize


def _random_corr(rng, p):
    A = rng.standard_normal((p, p + 2))
    S = A @ A.T
    d = np.sqrt(np.diag(S))
    return S / np.outer(d, d)


def test_kde_density_at_zero(rng):
    m = fit_margin_kde(rng.standard_normal(100_000))
    assert abs(m.pdf(0.0) - 1 / np.sqrt(2 * np.pi)) < 0.02


def test_kde_tail_coverage_and_round_trip(rng):
    x = rng.gamma(3.0, size=2000)
    b = silverman_bandwidth(x)
    m = fit_margin_kde(x)
    assert m.cdf(x.min() - 4 * b) < 1e-4
    assert m.cdf(x.max() + 4 * b) > 1 - 1e-4
    cell = np.diff(m.grid).max()
    pts = np.quantile(x, np.linspace(0.05, 0.95, 50))
    np.testing.assert_allclose(m.ppf(m.cdf(pts)), pts, atol=cell)


def test_grid_margin_consistency():
    g = np.linspace(-1, 1, 101)
    m = GridMargin(g, 1 - np.abs(g))
    assert m.cdf(0.0) == pytest.approx(0.5, abs=1e-12)
    u = np.linspace(0.01, 0.99, 99)
    np.testing.assert_allclose(m.cdf(m.ppf(u)), u, atol=1e-10)
    assert trapezoid(m.density, g) == pytest.approx(1.0)


def test_normal_scores_extremes(rng):
    x = rng.standard_normal(1000)
    assert normal_scores_correlation(np.column_stack([x, x ** 3])) == 1.0
    assert normal_scores_correlation(np.column_stack([x, -x])) == -1.0


def test_normal_scores_gaussian_consistency(rng):
    xy = rng.multivariate_normal([0, 0], [[1, 0.5], [0.5, 1]], 10_000)
    assert abs(normal_scores_correlation(xy) - 0.5) < 0.03


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_normal_scores_invariance_and_symmetry(seed):
    g = np.random.default_rng(seed)
    xy = g.multivariate_normal([0, 0], [[1, 0.3], [0.3, 1]], 300)
    base = normal_scores_correlation(xy)
    moved = normal_scores_correlation(np.column_stack([np.exp(xy[:, 0]), 3 * xy[:, 1] ** 3 + 1]))
    assert base == moved
    assert base == normal_scores_correlation(xy[:, ::-1])


def test_nearest_correlation_examples():
    assert np.array_equal(nearest_correlation(np.eye(3)).matrix, np.eye(3))
    C = nearest_correlation(np.array([[1.0, 1.2], [1.2, 1.0]])).matrix
    assert -1 < C[0, 1] < 1
    np.testing.assert_array_equal(np.diag(C), [1.0, 1.0])
    assert np.linalg.eigvalsh(C).min() >= 1e-8


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 8))
def test_nearest_correlation_postconditions(seed, p):
    g = np.random.default_rng(seed)
    raw = g.uniform(-1, 1, (p, p))
    raw = (raw + raw.T) / 2
    np.fill_diagonal(raw, 1.0)
    C = nearest_correlation(raw)
    assert np.linalg.eigvalsh(C.matrix).min() >= 1e-8
    np.testing.assert_array_equal(np.diag(C.matrix), 1.0)
    np.testing.assert_array_equal(nearest_correlation(C.matrix).matrix, C.matrix)


def test_correlation_matrix_validation():
    with pytest.raises(ValueError):
        CorrelationMatrix(np.array([[1.0, 0.5], [0.4, 1.0]]))
    with pytest.raises(ValueError):
        CorrelationMatrix(np.array([[1.0, 1.5], [1.5, 1.0]]))


def test_meta_gaussian_independent_reduces_to_product():
    margins = [ParametricMargin(stats.gamma(2.0)), ParametricMargin.normal(1.0, 2.0)]
    mg = MetaGaussian(margins, CorrelationMatrix(np.eye(2)))
    pts = np.array([[1.0, 0.0], [3.0, 2.5]])
    expect = stats.gamma(2.0).logpdf(pts[:, 0]) + stats.norm(1, 2).logpdf(pts[:, 1])
    np.testing.assert_allclose(meta_gaussian_logdensity(mg, pts), expect, rtol=1e-12)


def test_meta_gaussian_median_point():
    C = np.array([[1.0, 0.6], [0.6, 1.0]])
    margins = [ParametricMargin.normal(0, 1), ParametricMargin(stats.expon())]
    mg = MetaGaussian(margins, CorrelationMatrix(C))
    med = np.array([0.0, np.log(2.0)])
    expect = -0.5 * np.log(np.linalg.det(C)) + stats.norm.logpdf(0) + stats.expon.logpdf(np.log(2))
    assert meta_gaussian_logdensity(mg, med) == pytest.approx(expect, rel=1e-12)


def test_meta_gaussian_normalises_on_grid():
    mg = MetaGaussian([ParametricMargin(stats.gamma(3.0)), ParametricMargin.normal()],
                      CorrelationMatrix(np.array([[1.0, -0.7], [-0.7, 1.0]])))
    x = np.linspace(1e-6, 20, 600)
    y = np.linspace(-7, 7, 600)
    X, Y = np.meshgrid(x, y, indexing="ij")
    d = np.exp(mg.logpdf(np.column_stack([X.ravel(), Y.ravel()]))).reshape(X.shape)
    assert trapezoid(trapezoid(d, y, axis=1), x) == pytest.approx(1.0, abs=1e-3)


def test_sampling_moments_and_determinism():
    mg = MetaGaussian([ParametricMargin.normal()] * 3, CorrelationMatrix(np.eye(3)))
    ps = sample_meta_gaussian(mg, 100_000, RngStream(1))
    se = 1 / np.sqrt(100_000)
    assert np.all(np.abs(ps.theta.mean(0)) < 3 * se)
    assert np.all(np.abs(ps.theta.var(0) - 1) < 3 * np.sqrt(2) * se)
    a = sample_meta_gaussian(mg, 1, RngStream(7)).theta
    b = sample_meta_gaussian(mg, 1, RngStream(7)).theta
    np.testing.assert_array_equal(a, b)


def test_serialisation_round_trip(rng):
    m = fit_margin_kde(rng.standard_normal(500))
    mg = MetaGaussian([m, ParametricMargin.normal(2, 3)], CorrelationMatrix(np.array([[1, 0.2], [0.2, 1]])))
    back = MetaGaussian.from_dict(mg.to_dict())
    pts = rng.standard_normal((10, 2))
    np.testing.assert_allclose(back.logpdf(pts), mg.logpdf(pts))


def test_copula_p2_matches_direct_bivariate_run():
    model = NormalMeanModel(2)
    pool = generate_particles(model, 50_000, RngStream(3))
    s_obs = np.array([0.5, -0.2])
    est = GaussianCopulaABC(quantile=0.02).fit(pool, s_obs)
    direct = rejection_abc(pool, s_obs, None, KernelConfig(quantile=0.02), standardize(pool))
    from hdabc.adjust import regression_adjust
    direct = regression_adjust(direct)
    assert abs(est.correlation_.matrix[0, 1] - normal_scores_correlation(direct.theta)) < 0.05


def test_copula_independence_oracle():
    model = NormalMeanModel(4)
    post = copula_abc(model, np.zeros(4), 50_000, RngStream(5),
                      marginal_selections={j: [j] for j in range(4)}, quantile=0.02)
    off = post.correlation.matrix[np.triu_indices(4, 1)]
    assert np.max(np.abs(off)) < 0.05
    assert post.p == 4


def test_copula_estimator_validation():
    pool = generate_particles(NormalMeanModel(3), 2000, RngStream(0))
    with pytest.raises(ValueError):
        GaussianCopulaABC(marginal_selections={0: [0], 1: [1]}).fit(pool, np.zeros(3))
    with pytest.raises(ValueError):
        GaussianCopulaABC(pair_selections={(0, 1): [0, 1]}).fit(pool, np.zeros(3))
