import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.integrate import trapezoid

from conftest import IdentityModel
from hdabc.core import RngStream
from hdabc.rde import (GaussianMixture, PilotProposal, RegressionDensityEstimator, build_pilot,
                       condition_mixture, fit_gaussian_mixture, fit_joint_mixture, fit_marginal_conditional,
                       likelihood_approx, load_rde, mcmc_sample, metropolis_log_ratio, transform_to_scores)
from hdabc.rde.mixture import ConditionalDensity


def _random_spd(rng, d):
    A = rng.standard_normal((d, d))
    return A @ A.T + d * np.eye(d)


def _assert_monotone(trace):
    t = np.asarray(trace)
    assert np.all(np.diff(t) >= -1e-9 * np.abs(t[:-1]))


# marginal regressions

def test_linear_gaussian_slope_and_variance(rng):
    theta = rng.standard_normal((10_000, 2))
    s = 2 * theta[:, 0] + rng.standard_normal(10_000)
    m = fit_marginal_conditional(theta, s)
    slope = m.mean(np.array([[1.0, 0.0]]))[0] - m.mean(np.array([[0.0, 0.0]]))[0]
    assert abs(slope - 2) < 3 * 0.01
    assert abs(m.variance(np.zeros((1, 2)))[0] - 1) < 3 * np.sqrt(2 / 10_000)
    assert m.converged and not m.warning


def test_heteroscedastic_log_variance_slope(rng):
    theta = rng.uniform(0.5, 3.0, (5000, 1))
    s = theta[:, 0] * rng.standard_normal(5000)
    m = fit_marginal_conditional(theta, s)
    # log variance is 2 log(theta), increasing across the range
    assert m.logvar_coef[1] > 0.5
    lo, hi = m.log_variance(np.array([[0.75], [2.5]]))
    assert hi - lo > 1.5


def test_constant_summary_warns(rng):
    theta = rng.standard_normal((200, 2))
    with pytest.warns(RuntimeWarning):
        m = fit_marginal_conditional(theta, np.full(200, 3.0))
    assert m.warning
    np.testing.assert_array_equal(m.mean_coef[1:], 0.0)
    np.testing.assert_allclose(m.variance(theta), 1e-12)


def test_marginal_requires_enough_rows(rng):
    with pytest.raises(ValueError):
        fit_marginal_conditional(rng.standard_normal((12, 2)), rng.standard_normal(12))


def test_scores_are_pivotal(rng):
    theta = rng.standard_normal((10_000, 2))
    A = np.array([[1.0, 0.5], [-0.3, 2.0]])
    S = theta @ A.T + rng.standard_normal((10_000, 2)) * [0.5, 1.5]
    margins = [fit_marginal_conditional(theta, S[:, k]) for k in range(2)]
    U = transform_to_scores(theta, S, margins)
    crit = stats.kstwo(10_000).ppf(0.99)
    for k in range(2):
        assert stats.kstest(U[:, k], "norm").statistic < crit


def test_scores_median_and_monotone(rng):
    theta = rng.standard_normal((500, 2))
    s = theta[:, 0] + 0.3 * rng.standard_normal(500)
    m = fit_marginal_conditional(theta, s)
    t = np.array([[0.4, -0.2]])
    assert transform_to_scores(t, m.mean(t)[:, None], [m])[0, 0] == 0.0
    grid = np.linspace(-0.5, 1.5, 50)
    U = transform_to_scores(np.repeat(t, 50, 0), grid[:, None], [m])[:, 0]
    assert np.all(np.diff(U) > 0)
    wide = np.linspace(-20, 20, 400)
    U = transform_to_scores(np.repeat(t, 400, 0), wide[:, None], [m])[:, 0]
    assert np.all(np.diff(U) >= 0)
    assert np.all(np.isfinite(transform_to_scores(t, np.array([[1e6]]), [m])))


def test_marginal_round_trip(rng):
    theta = rng.standard_normal((300, 2))
    m = fit_marginal_conditional(theta, theta[:, 0] + rng.standard_normal(300))
    back = type(m).from_dict(json.loads(json.dumps(m.to_dict())))
    np.testing.assert_array_equal(back.logpdf(theta[:, 0], theta), m.logpdf(theta[:, 0], theta))


# mixtures

def test_single_gaussian_selects_one_component():
    picks = 0
    for seed in range(10):
        g = np.random.default_rng(seed)
        X = g.multivariate_normal(np.zeros(3), _random_spd(g, 3), 1500)
        gm = fit_joint_mixture(X[:, :2], X[:, 2:], k_max=3, random_state=seed, n_init=3)
        _assert_monotone(gm.loglik_trace)
        picks += gm.n_components == 1
        if gm.n_components == 1:
            np.testing.assert_allclose(gm.means[0], X.mean(0), atol=1e-8)
            np.testing.assert_allclose(gm.covariances[0], np.cov(X, rowvar=False, bias=True), atol=1e-8)
    assert picks >= 9


def test_separated_clusters_select_two(rng):
    X = np.vstack([rng.standard_normal((600, 2)), rng.standard_normal((400, 2)) + [12.0, 0.0]])
    gm = fit_joint_mixture(X[:, :1], X[:, 1:], k_max=4, random_state=0, n_init=5)
    assert gm.n_components == 2
    resp = gm.responsibilities(X)
    assert np.all(np.max(resp, axis=1) > 1 - 1e-6)
    np.testing.assert_allclose(np.sort(gm.weights), [0.4, 0.6], atol=1e-9)


def test_em_trace_monotone_for_every_k(rng):
    X = np.vstack([rng.standard_normal((300, 3)), rng.standard_normal((300, 3)) * 0.5 + 2])
    for K in (1, 2, 3, 4):
        gm = fit_gaussian_mixture(X, K, random_state=K, n_init=4)
        _assert_monotone(gm.loglik_trace)
        assert np.isfinite(gm.bic)


def test_joint_mixture_requires_rows(rng):
    with pytest.raises(ValueError):
        fit_joint_mixture(rng.standard_normal((30, 2)), rng.standard_normal((30, 2)))


def test_condition_single_component_closed_form(rng):
    q, p = 3, 2
    mu = rng.standard_normal(q + p)
    S = _random_spd(rng, q + p)
    gmm = GaussianMixture(np.array([1.0]), mu[None], S[None])
    theta = rng.standard_normal(p)
    c = condition_mixture(gmm, theta, q)
    Suu, Sut, Stt = S[:q, :q], S[:q, q:], S[q:, q:]
    mean = mu[:q] + Sut @ np.linalg.solve(Stt, theta - mu[q:])
    cov = Suu - Sut @ np.linalg.solve(Stt, Sut.T)
    assert c.weights[0] == 1.0
    np.testing.assert_allclose(c.means[0], mean, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(c.covariances[0], cov, rtol=1e-12, atol=1e-12)


def test_condition_block_diagonal(rng):
    q, p = 2, 2
    means = rng.standard_normal((2, q + p))
    covs = np.zeros((2, q + p, q + p))
    for k in range(2):
        covs[k, :q, :q] = _random_spd(rng, q)
        covs[k, q:, q:] = _random_spd(rng, p)
    w = np.array([0.3, 0.7])
    gmm = GaussianMixture(w, means, covs)
    theta = rng.standard_normal(p)
    c = condition_mixture(gmm, theta, q)
    np.testing.assert_allclose(c.means, means[:, :q], atol=1e-12)
    np.testing.assert_allclose(c.covariances, covs[:, :q, :q], atol=1e-12)
    lw = np.log(w) + [stats.multivariate_normal(means[k, q:], covs[k, q:, q:]).logpdf(theta) for k in range(2)]
    np.testing.assert_allclose(c.weights, np.exp(lw - np.logaddexp(*lw)), rtol=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_conditional_weights_sum_to_one(seed, shift):
    g = np.random.default_rng(seed)
    K, d = 3, 4
    gmm = GaussianMixture(g.dirichlet(np.ones(K)), g.standard_normal((K, d)),
                          np.array([_random_spd(g, d) for _ in range(K)]))
    c = condition_mixture(gmm, g.standard_normal(2) + shift, 2)
    assert abs(c.weights.sum() - 1) <= 1e-12


def test_vectorised_conditional_matches_single(rng):
    gmm = GaussianMixture(np.array([0.4, 0.6]), rng.standard_normal((2, 4)),
                          np.array([_random_spd(rng, 4) for _ in range(2)]))
    U, theta = rng.standard_normal((5, 2)), rng.standard_normal((5, 2))
    batch = ConditionalDensity(gmm, 2).logpdf(U, theta)
    single = [condition_mixture(gmm, theta[i], 2).logpdf(U[i])[0] for i in range(5)]
    np.testing.assert_allclose(batch, single, rtol=1e-12)


# likelihood

def _fit_linear(rng, n=4000, k_max=2):
    theta = rng.standard_normal((n, 2))
    S = theta + 0.5 * rng.standard_normal((n, 2))
    return RegressionDensityEstimator(k_max=k_max, n_init=2, random_state=0).fit(theta, S), theta, S


def test_independent_reduction(rng):
    est, theta, S = _fit_linear(rng)
    mu = np.zeros(4)
    cov = np.eye(4)
    cov[2:, 2:] = np.cov(theta, rowvar=False)
    est.mixture_ = GaussianMixture(np.array([1.0]), mu[None], cov[None])
    est._set_cache()
    expect = sum(m.logpdf(S[:20, k], theta[:20]) for k, m in enumerate(est.marginals_))
    np.testing.assert_allclose(est.score_samples(S[:20], theta[:20]), expect, rtol=1e-8, atol=1e-8)


def test_single_summary_density_integrates_to_one(rng):
    theta = rng.uniform(-2, 2, (5000, 1))
    s = np.sin(theta[:, 0]) + (0.3 + 0.1 * theta[:, 0] ** 2) * rng.standard_normal(5000)
    est = RegressionDensityEstimator(k_max=3, n_init=2, random_state=1).fit(theta, s[:, None])
    grid = np.linspace(-6, 6, 4001)
    for t in (-1.0, 0.3, 1.5):
        dens = np.exp(est.score_samples(grid[:, None], np.array([t])))
        assert trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-2)


def test_likelihood_tracks_truth_small_scale(rng):
    est, _, _ = _fit_linear(rng, n=20_000)
    t = rng.standard_normal((50, 2))
    s = t + 0.5 * rng.standard_normal((50, 2))
    truth = stats.norm(t, 0.5).logpdf(s).sum(1)
    assert np.max(np.abs(est.score_samples(s, t) - truth)) < 0.2


def test_json_round_trip(rng, tmp_path):
    est, theta, S = _fit_linear(rng)
    path = tmp_path / "rde.json"
    est.save(path)
    back = load_rde(path)
    np.testing.assert_allclose(back.score_samples(S[:30], theta[:30]), est.score_samples(S[:30], theta[:30]),
                               rtol=1e-12)
    assert likelihood_approx(back, S[0], theta[0]) == pytest.approx(est.score_samples(S[:1], theta[:1])[0])


def test_estimator_is_sklearn_compatible():
    from sklearn.base import clone

    est = RegressionDensityEstimator(k_max=2, random_state=3)
    assert clone(est).get_params() == est.get_params()


# pilot proposal

def test_pilot_infinite_threshold_gives_box_moments():
    model = IdentityModel(2)
    box = ((-1.0, 3.0), (0.0, 1.0))
    pilot = build_pilot(model, 20_000, np.inf, RngStream(2), box=box)
    se = np.array([4.0, 1.0]) / np.sqrt(12 * 20_000)
    assert np.all(np.abs(pilot.mean - [1.0, 0.5]) < 4 * se)
    np.testing.assert_allclose(np.diag(pilot.cov), [16 / 12, 1 / 12], rtol=0.03)


def test_pilot_identity_centres_on_observation():
    pilot = build_pilot(IdentityModel(3), 20_000, 0.3, RngStream(3), box=((-2, 2),) * 3)
    assert np.all(np.abs(pilot.mean) < 0.05)


def test_pilot_errors():
    with pytest.raises(ValueError):
        build_pilot(IdentityModel(2), 10, 1.0, RngStream(0))
    with pytest.raises(ValueError):
        build_pilot(IdentityModel(2), 1000, 0.0, RngStream(0), box=((-1, 1), (-1, 1)))


def test_pilot_samples_truncated_and_density_normalised(rng):
    prop = PilotProposal(np.array([1.0, -1.0]), np.array([[2.0, 0.6], [0.6, 1.0]]))
    draws = prop.sample(rng, 100_000)
    assert np.all(prop.mahalanobis2(draws) < 9)
    assert np.all(np.isfinite(prop.logpdf(draws)))
    one = PilotProposal(np.zeros(1), np.eye(1))
    x = np.linspace(-3, 3, 20_001)
    assert trapezoid(np.exp(one.logpdf(x[:, None])), x) == pytest.approx(1.0, abs=1e-3)


# MCMC

def test_mcmc_standard_normal_target():
    res = mcmc_sample(lambda t: -0.5 * t[0] ** 2, lambda t: 0.0, [3.0], 100_000, rng=1)
    assert abs(res.chain.mean()) < 0.05
    assert abs(res.chain.var() - 1) < 0.1
    assert 0.2 < res.acceptance_rate < 0.7


def test_metropolis_ratio_detailed_balance():
    a, b = -1.3, -4.2
    assert metropolis_log_ratio(a, b) + metropolis_log_ratio(b, a) == 0.0


def test_mcmc_seed_reproducible():
    def run():
        return mcmc_sample(lambda t: -0.5 * t @ t, lambda t: 0.0, [0.0, 0.0], 2000, rng=5).chain

    np.testing.assert_array_equal(run(), run())


def test_mcmc_errors():
    with pytest.raises(RuntimeError):
        mcmc_sample(lambda t: 0.0 if np.all(t == 0) else -np.inf, lambda t: 0.0, [0.0], 100, rng=0, burn_in=50)
    with pytest.raises(ValueError):
        mcmc_sample(lambda t: 0.0, lambda t: -np.inf, [0.0], 10, rng=0)
