"""Regression density estimate of the summary likelihood."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.special import ndtri
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..core import ParticleSet
from .marginals import MarginalConditionalModel, fit_marginal_conditional, transform_to_scores
from .mixture import ConditionalDensity, GaussianMixture, fit_joint_mixture

__all__ = ["RegressionDensityEstimator", "likelihood_approx", "load_rde"]

_HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)


class RegressionDensityEstimator(BaseEstimator):
    """Conditional density ``L(s | theta)`` built from marginal regressions and a mixture.

    Each summary gets a heteroscedastic Gaussian regression on ``theta``; the
    summaries are mapped to normal scores ``U`` and a Gaussian mixture is fitted
    to ``(U, theta)``. The estimate is

    ``L(s | theta) = g(U | theta) prod_j f_j(s_j | theta) / phi(U_j)``

    with one Jacobian factor per summary coordinate and ``g`` the mixture
    conditional on ``theta``.

    Parameters
    ----------
    k_max : int, default=5
        Largest number of mixture components considered by BIC.
    n_init : int, default=10
        k-means restarts per candidate ``K``.
    random_state : int, Generator or None
    """

    def __init__(self, k_max: int = 5, n_init: int = 10, random_state=None):
        self.k_max = k_max
        self.n_init = n_init
        self.random_state = random_state

    def fit(self, theta, summaries, weights=None):
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        S = np.atleast_2d(np.asarray(summaries, dtype=float))
        if theta.shape[0] != S.shape[0]:
            raise ValueError("theta and summaries must have the same number of rows")
        self.marginals_ = [fit_marginal_conditional(theta, S[:, k], weights) for k in range(S.shape[1])]
        U = transform_to_scores(theta, S, self.marginals_)
        self.mixture_ = fit_joint_mixture(U, theta, self.k_max, self.random_state, n_init=self.n_init)
        self._set_cache()
        return self

    def fit_particles(self, particles: ParticleSet):
        return self.fit(particles.theta, particles.summaries, particles.weights)

    def _set_cache(self):
        self.n_summaries_ = len(self.marginals_)
        self.n_params_ = self.mixture_.dim - self.n_summaries_
        self._cond = ConditionalDensity(self.mixture_, self.n_summaries_)

    def score_samples(self, summaries, theta) -> np.ndarray:
        """``log L(s | theta)`` row by row; ``theta`` may be a single vector."""
        check_is_fitted(self, "mixture_")
        S = np.atleast_2d(np.asarray(summaries, dtype=float))
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        theta = np.broadcast_to(theta, (S.shape[0], theta.shape[1]))
        U = transform_to_scores(theta, S, self.marginals_)
        log_f = sum(m.logpdf(S[:, k], theta) for k, m in enumerate(self.marginals_))
        log_phi = -0.5 * np.sum(U * U, axis=1) - self.n_summaries_ * _HALF_LOG_2PI
        return self._cond.logpdf(U, theta) + log_f - log_phi

    def score(self, summaries, theta) -> float:
        return float(np.mean(self.score_samples(summaries, theta)))

    def to_dict(self) -> dict:
        check_is_fitted(self, "mixture_")
        return {
            "params": {"k_max": self.k_max, "n_init": self.n_init,
                       "random_state": self.random_state if isinstance(self.random_state, int) else None},
            "n_summaries": self.n_summaries_,
            "n_params": self.n_params_,
            "marginals": [m.to_dict() for m in self.marginals_],
            "mixture": self.mixture_.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionDensityEstimator":
        est = cls(**d.get("params", {}))
        est.marginals_ = [MarginalConditionalModel.from_dict(m) for m in d["marginals"]]
        est.mixture_ = GaussianMixture.from_dict(d["mixture"])
        est._set_cache()
        return est

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


def load_rde(path) -> RegressionDensityEstimator:
    return RegressionDensityEstimator.from_dict(json.loads(Path(path).read_text()))


def likelihood_approx(model: RegressionDensityEstimator, s, theta) -> float:
    """``log L(s | theta)`` for a single summary vector and parameter."""
    return float(model.score_samples(np.atleast_2d(s), np.atleast_2d(theta))[0])
