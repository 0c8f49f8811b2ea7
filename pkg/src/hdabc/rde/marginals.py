"""Heteroscedastic Gaussian regressions for each summary given the parameters."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np
from scipy.special import ndtr, ndtri

from ..core import ParticleSet

__all__ = [
    "MarginalConditionalModel",
    "fit_marginal_conditional",
    "fit_marginal_conditionals",
    "transform_to_scores",
    "VARIANCE_FLOOR",
    "PROB_CLAMP",
]

VARIANCE_FLOOR = 1e-12
PROB_CLAMP = 1e-12
_LOG_FLOOR = np.log(VARIANCE_FLOOR)
_LOG_2PI = np.log(2 * np.pi)


def _standardize(theta, center, scale):
    return (np.atleast_2d(np.asarray(theta, dtype=float)) - center) / scale


def mean_basis(z) -> np.ndarray:
    """Intercept, linear, squared and pairwise-interaction columns."""
    n, p = z.shape
    quad = [z[:, i] * z[:, j] for i, j in combinations_with_replacement(range(p), 2)]
    return np.column_stack([np.ones(n), z] + quad)


def variance_basis(z) -> np.ndarray:
    return np.column_stack([np.ones(z.shape[0]), z])


@dataclass(frozen=True)
class MarginalConditionalModel:
    """``s_k | theta ~ N(m(theta), exp(v(theta)))``.

    ``m`` is quadratic with interactions and ``v`` is linear, both in the
    standardised parameters ``(theta - center) / scale``. Variances are
    floored at 1e-12.

    Attributes
    ----------
    converged : bool
        The alternating fit met its tolerance within the iteration cap.
    warning : bool
        The fit did not converge or the variance hit its floor.
    """

    mean_coef: np.ndarray
    logvar_coef: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    loglik: float = np.nan
    n_iter: int = 0
    converged: bool = True
    warning: bool = False

    def _z(self, theta):
        return _standardize(theta, self.center, self.scale)

    def mean(self, theta) -> np.ndarray:
        return mean_basis(self._z(theta)) @ self.mean_coef

    def log_variance(self, theta) -> np.ndarray:
        return np.maximum(variance_basis(self._z(theta)) @ self.logvar_coef, _LOG_FLOOR)

    def variance(self, theta) -> np.ndarray:
        return np.exp(self.log_variance(theta))

    def logpdf(self, s, theta) -> np.ndarray:
        v = self.log_variance(theta)
        r = np.asarray(s, dtype=float) - self.mean(theta)
        return -0.5 * (_LOG_2PI + v + r * r * np.exp(-v))

    def standardized(self, s, theta) -> np.ndarray:
        return (np.asarray(s, dtype=float) - self.mean(theta)) * np.exp(-0.5 * self.log_variance(theta))

    def cdf(self, s, theta) -> np.ndarray:
        return ndtr(self.standardized(s, theta))

    def to_dict(self) -> dict:
        return {
            "mean_coef": self.mean_coef.tolist(),
            "logvar_coef": self.logvar_coef.tolist(),
            "center": self.center.tolist(),
            "scale": self.scale.tolist(),
            "loglik": float(self.loglik),
            "n_iter": int(self.n_iter),
            "converged": bool(self.converged),
            "warning": bool(self.warning),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MarginalConditionalModel":
        arrays = {k: np.asarray(d[k], dtype=float) for k in ("mean_coef", "logvar_coef", "center", "scale")}
        return cls(**arrays, loglik=d.get("loglik", np.nan), n_iter=d.get("n_iter", 0),
                   converged=d.get("converged", True), warning=d.get("warning", False))


def _wls(X, y, w):
    if np.ptp(y) == 0:
        # exact fit; lstsq would leave rounding-level slopes
        beta = np.zeros(X.shape[1])
        beta[0] = y[0]
        return beta
    sw = np.sqrt(w)
    return np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)[0]


def _loglik(r, v, w):
    return -0.5 * np.sum(w * (_LOG_2PI + v + r * r * np.exp(-v)))


def fit_marginal_conditional(theta, s, weights=None, tol: float = 1e-8, max_iter: int = 200) -> MarginalConditionalModel:
    """Maximum-likelihood fit by alternating weighted least squares.

    Each sweep refits the mean by WLS with weights ``exp(-v)``, then takes one
    Fisher-scoring step (with step halving) on the log-variance coefficients.
    Iteration stops when the per-observation log-likelihood changes by less
    than ``tol``. Without convergence the best iterate is returned with
    ``warning=True``.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    s = np.asarray(s, dtype=float)
    n = theta.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    w = w * (n / w.sum())
    center = theta.mean(axis=0)
    scale = theta.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    z = (theta - center) / scale
    X = mean_basis(z)
    Z = variance_basis(z)
    if n <= 2 * X.shape[1]:
        raise ValueError(f"need more than {2 * X.shape[1]} particles for a quadratic mean in {theta.shape[1]} parameters")

    beta = _wls(X, s, w)
    r = s - X @ beta
    gamma = np.zeros(Z.shape[1])
    gamma[0] = np.log(max(np.average(r * r, weights=w), VARIANCE_FLOOR))
    if gamma[0] <= _LOG_FLOOR:
        warnings.warn("summary is a deterministic function of the parameters; variance floored",
                      RuntimeWarning, stacklevel=2)
        gamma[0] = _LOG_FLOOR
        v = np.full(n, _LOG_FLOOR)
        return MarginalConditionalModel(beta, gamma, center, scale, _loglik(r, v, w), 0, True, True)

    v = np.maximum(Z @ gamma, _LOG_FLOOR)
    ll = _loglik(r, v, w)
    best = (ll, beta, gamma)
    converged = False
    info = np.linalg.pinv((Z * w[:, None]).T @ Z)
    it = 0
    for it in range(1, max_iter + 1):
        beta = _wls(X, s, w * np.exp(-v))
        r = s - X @ beta
        ll_mid = _loglik(r, v, w)
        step = info @ (Z.T @ (w * (r * r * np.exp(-v) - 1.0)))
        t = 1.0
        for _ in range(30):
            cand = gamma + t * step
            v_new = np.maximum(Z @ cand, _LOG_FLOOR)
            ll_new = _loglik(r, v_new, w)
            if ll_new >= ll_mid:
                break
            t *= 0.5
        else:
            cand, v_new, ll_new = gamma, v, ll_mid
        gamma, v = cand, v_new
        change = abs(ll_new - ll) / n
        ll = ll_new
        if ll > best[0]:
            best = (ll, beta, gamma)
        if change < tol:
            converged = True
            break
    ll, beta, gamma = best
    floored = bool(np.any(Z @ gamma <= _LOG_FLOOR))
    if not converged:
        warnings.warn(f"marginal regression did not converge in {max_iter} iterations", RuntimeWarning, stacklevel=2)
    return MarginalConditionalModel(beta, gamma, center, scale, ll, it, converged, (not converged) or floored)


def fit_marginal_conditionals(particles: ParticleSet, tol: float = 1e-8, max_iter: int = 200):
    """One :class:`MarginalConditionalModel` per summary column."""
    return [fit_marginal_conditional(particles.theta, particles.summaries[:, k], particles.weights, tol, max_iter)
            for k in range(particles.q)]


def transform_to_scores(theta, summaries, marginals) -> np.ndarray:
    """``U[j, k] = Phi^{-1}(F_k(s_jk | theta_j))`` with probabilities clamped to ``[1e-12, 1 - 1e-12]``."""
    S = np.atleast_2d(np.asarray(summaries, dtype=float))
    if S.shape[1] != len(marginals):
        raise ValueError(f"summaries have {S.shape[1]} columns but {len(marginals)} marginal models were given")
    u = np.column_stack([m.cdf(S[:, k], theta) for k, m in enumerate(marginals)])
    return ndtri(np.clip(u, PROB_CLAMP, 1 - PROB_CLAMP))
