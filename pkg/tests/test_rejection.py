import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from conftest import IdentityModel, NormalMeanModel
from hdabc.core import NoAcceptancesError, ParticleSet, RngStream, generate_particles
from hdabc.rejection import (DistanceConfig, KernelConfig, RejectionABC, SemiAutoSummaries, fit_semi_auto,
                             kernel_weights, make_distance, rejection_abc, scaled_distances, select_bandwidth,
                             standardize)


def _ps(S, theta=None):
    S = np.asarray(S, float)
    theta = np.zeros((S.shape[0], 1)) if theta is None else theta
    return ParticleSet(theta, S)


def test_standardize_uses_n_minus_one():
    cfg = standardize(_ps([[0.0], [2.0]]))
    assert cfg.scaling[0] == pytest.approx(1 / np.sqrt(2))
    assert not cfg.warning


def test_standardize_constant_columns_warn():
    with pytest.warns(RuntimeWarning):
        cfg = standardize(_ps(np.full((5, 3), 4.0)))
    np.testing.assert_array_equal(cfg.scaling, np.ones(3))
    assert cfg.constant_columns == (0, 1, 2)


def test_standardize_is_idempotent_on_standardised_data(rng):
    S = rng.standard_normal((5000, 3))
    S = (S - S.mean(0)) / S.std(0, ddof=1)
    np.testing.assert_allclose(standardize(_ps(S)).scaling, 1.0, atol=1e-12)


def test_select_bandwidth_examples(rng):
    d = np.arange(1, 1001, dtype=float)
    assert select_bandwidth(d, 0.001) == 1.0
    assert select_bandwidth(d, 1.0) == 1000.0
    u = rng.random(10_000)
    assert abs(select_bandwidth(u, 0.1) - 0.1) < 0.02
    with pytest.raises(ValueError):
        select_bandwidth(d, 0.0)


def test_uniform_kernel_at_max_distance_keeps_everything(rng):
    ps = generate_particles(NormalMeanModel(2), 200, RngStream(0))
    d = scaled_distances(ps.summaries, np.zeros(2))
    out = rejection_abc(ps, np.zeros(2), kernel=KernelConfig("uniform", bandwidth=d.max()))
    assert out.r == 200
    assert np.all(out.weights == 1.0)


def test_quantile_rule_accepts_about_one_percent():
    ps = generate_particles(NormalMeanModel(2), 100_000, RngStream(1))
    out = rejection_abc(ps, np.zeros(2), kernel=KernelConfig(quantile=0.01), dist=standardize(ps))
    assert out.r == 1000
    assert out.meta["accepted"] == 1000


def test_conjugate_normal_posterior():
    # prior N(0, 10^2), s ~ N(theta, 1), s_obs = 0: posterior N(0, 100/101)
    m = NormalMeanModel(1, prior_sd=10.0)
    ps = generate_particles(m, 200_000, RngStream(2))
    out = rejection_abc(ps, np.zeros(1), kernel=KernelConfig(bandwidth=0.05))
    t = out.theta[:, 0]
    post_var = 100 / 101
    assert abs(t.mean()) < 3 * np.sqrt(post_var / t.size)
    assert abs(t.var(ddof=1) - post_var) < 3 * post_var * np.sqrt(2 / (t.size - 1)) + 0.01


def test_no_acceptances_raises():
    ps = _ps([[1.0], [2.0]])
    with pytest.raises(NoAcceptancesError) as info:
        rejection_abc(ps, np.zeros(1), kernel=KernelConfig(bandwidth=0.5))
    assert info.value.min_distance == pytest.approx(1.0)


def test_invalid_selection_and_s_obs():
    ps = _ps(np.random.default_rng(0).standard_normal((10, 3)))
    with pytest.raises(ValueError):
        rejection_abc(ps, np.zeros(3), selection=[0, 3])
    with pytest.raises(ValueError):
        rejection_abc(ps, np.zeros(3), selection=[1, 1])
    with pytest.raises(ValueError):
        rejection_abc(ps, np.zeros(2))
    with pytest.raises(ValueError):
        rejection_abc(ps, np.array([0.0, np.nan, 0.0]))


def test_kernels():
    d = np.array([0.0, 0.5, 1.0, 2.0])
    np.testing.assert_array_equal(kernel_weights(d, 1.0, "uniform"), [1, 1, 1, 0])
    np.testing.assert_allclose(kernel_weights(d, 1.0, "epanechnikov"), [1, 0.75, 0, 0])
    np.testing.assert_allclose(kernel_weights(d, 1.0, "gaussian"), np.exp(-0.5 * d * d))
    with pytest.raises(ValueError):
        KernelConfig("triangle")


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.9), st.floats(0.05, 0.9))
def test_smaller_bandwidth_never_grows_accepted_set(seed, a, b):
    r = np.random.default_rng(seed)
    ps = _ps(r.standard_normal((300, 3)), np.arange(300.0)[:, None])
    lo, hi = sorted([a, b])
    small = rejection_abc(ps, np.zeros(3), kernel=KernelConfig(quantile=lo))
    big = rejection_abc(ps, np.zeros(3), kernel=KernelConfig(quantile=hi))
    assert set(small.theta[:, 0]) <= set(big.theta[:, 0])
    assert np.all(small.weights > 0) and np.all(big.weights > 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_selection_equals_preprojected_summaries(seed):
    r = np.random.default_rng(seed)
    S = r.standard_normal((400, 5))
    theta = r.standard_normal((400, 2))
    s_obs = r.standard_normal(5) * 0.3
    sel = [4, 1, 2]
    full = ParticleSet(theta, S)
    proj = ParticleSet(theta, S[:, sel])
    dist = standardize(full)
    a = rejection_abc(full, s_obs, sel, KernelConfig(quantile=0.1), dist)
    b = rejection_abc(proj, s_obs[sel], None, KernelConfig(quantile=0.1), DistanceConfig(dist.scaling[sel]))
    np.testing.assert_array_equal(a.theta, b.theta)
    np.testing.assert_array_equal(a.weights, b.weights)


def test_semi_auto_identity_map():
    ps = generate_particles(IdentityModel(3), 500, RngStream(4))
    m = fit_semi_auto(ps)
    np.testing.assert_allclose(m.coefficients[:, 1:], np.eye(3), atol=1e-8)
    np.testing.assert_allclose(m.coefficients[:, 0], 0.0, atol=1e-8)


def test_semi_auto_independent_summaries(rng):
    theta = rng.normal(2.0, 1.0, (10_000, 1))
    S = rng.standard_normal((10_000, 2))
    m = fit_semi_auto(ParticleSet(theta, S))
    se = 1 / np.sqrt(10_000)
    assert np.all(np.abs(m.coefficients[0, 1:]) < 3 * se * 1.5)
    assert abs(m.coefficients[0, 0] - theta.mean()) < 3 * se * 1.5


def test_semi_auto_matches_normal_equations(rng):
    t = rng.random(2000)
    S = np.column_stack([t, t ** 2])
    theta = t + 0.1 * rng.standard_normal(2000)
    m = fit_semi_auto(ParticleSet(theta[:, None], S))
    X = np.column_stack([np.ones(2000), S])
    beta = np.linalg.solve(X.T @ X, X.T @ theta)
    np.testing.assert_allclose(beta, m.coefficients[0], rtol=1e-8, atol=1e-10)


def test_semi_auto_ridge_on_collinear_summaries(rng):
    t = rng.standard_normal(500)
    S = np.column_stack([t, t * (1 + 1e-14)])
    with pytest.warns(RuntimeWarning, match="ridge"):
        m = fit_semi_auto(ParticleSet(t[:, None], S))
    assert np.all(np.isfinite(m.coefficients))


def test_estimators_follow_sklearn_conventions(rng):
    est = RejectionABC(quantile=0.05, selection=[0])
    assert clone(est).get_params() == est.get_params()
    ps = generate_particles(NormalMeanModel(2), 2000, RngStream(9))
    out = est.fit(ps).sample(np.zeros(2))
    assert out.r == 100
    X = rng.standard_normal((300, 4))
    y = X @ [1.0, 0, 0, 2.0]
    Z = SemiAutoSummaries().fit(X, y).transform(X)
    np.testing.assert_allclose(Z[:, 0], y, atol=1e-8)


def test_make_distance_options():
    ps = _ps(np.random.default_rng(1).standard_normal((50, 2)))
    assert np.all(make_distance(ps, "none").scaling == 1)
    np.testing.assert_array_equal(make_distance(ps, [2.0, 3.0]).scaling, [2.0, 3.0])
    with pytest.raises(ValueError):
        make_distance(ps, "mad")
