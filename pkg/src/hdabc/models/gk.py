"""Univariate and Gaussian-copula multivariate g-and-k models."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import ndtri

from ..copula import CorrelationMatrix, _score_table, nearest_correlation
from ..core import SimulatorError, SimulatorModel, as_generator

__all__ = [
    "GkParams",
    "gk_quantile",
    "gk_from_normal",
    "gk_summaries",
    "GkModel",
    "MultiGkModel",
    "sample_wishart_correlation",
    "simulate_multi_gk",
    "DEFAULT_BOX",
]

C_SKEW = 0.8

# location, scale, skewness, kurtosis ranges of the default (pilot-restricted) prior
DEFAULT_BOX = ((-0.1, 0.1), (0.0, 0.05), (-1.0, 1.0), (-0.2, 0.5))

_OCTILES = np.array([1, 2, 3, 4, 5, 6, 7]) / 8


@dataclass(frozen=True)
class GkParams:
    A: float = 0.0
    B: float = 1.0
    g: float = 0.0
    k: float = 0.0
    c: float = C_SKEW

    def __post_init__(self):
        if not self.B > 0:
            raise ValueError(f"g-and-k scale B must be positive, got {self.B}")
        if not self.k > -0.5:
            raise ValueError(f"g-and-k kurtosis k must exceed -0.5, got {self.k}")
        if self.c != C_SKEW:
            raise ValueError("c is fixed at 0.8")


def gk_from_normal(z, A, B, g, k, c=C_SKEW):
    """g-and-k transform of standard normal quantiles ``z``; broadcasts over parameters."""
    z = np.asarray(z, dtype=float)
    # (1 - e^{-gz}) / (1 + e^{-gz}) == tanh(gz / 2), without overflow
    return A + B * (1 + c * np.tanh(g * z / 2)) * (1 + z * z) ** k * z


def gk_quantile(params: GkParams, u):
    """Quantile function ``Q(u | A, B, g, k)`` for ``u`` in (0, 1)."""
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    return gk_from_normal(ndtri(u), params.A, params.B, params.g, params.k, params.c)


def gk_summaries(y, axis: int = -1) -> np.ndarray:
    """Robust summaries ``(L2, L3 - L1, (O7 - O5 + O3 - O1)/(L3 - L1), (L3 + L1 - 2 L2)/(L3 - L1))``
    where ``L`` are quartiles and ``O`` octiles; the last axis indexes the four summaries."""
    o = np.moveaxis(np.quantile(y, _OCTILES, axis=axis), 0, -1)
    l1, l2, l3 = o[..., 1], o[..., 3], o[..., 5]
    iqr = l3 - l1
    with np.errstate(divide="ignore", invalid="ignore"):
        kurt = (o[..., 6] - o[..., 4] + o[..., 2] - o[..., 0]) / iqr
        skew = (l3 + l1 - 2 * l2) / iqr
    return np.stack([l2, iqr, kurt, skew], axis=-1)


def _box_logdensity(theta, box):
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    t = np.asarray(theta, dtype=float)
    inside = np.all((t >= lo) & (t <= hi), axis=-1)
    return np.where(inside, 0.0, -np.inf)


def _check_margins(theta4):
    """Rows whose (A, B, g, k) blocks leave the valid region."""
    B = theta4[..., 1]
    k = theta4[..., 3]
    bad = (B <= 0) | (k <= -0.5) | ~np.isfinite(theta4).all(axis=-1)
    return bad.reshape(bad.shape[0], -1).any(axis=1)


class GkModel(SimulatorModel):
    """``n`` iid g-and-k observations; parameters ``(A, B, g, k)``.

    Summaries are the four robust quantile statistics of :func:`gk_summaries`.
    The observed data are simulated once from ``true_theta`` with ``obs_seed``.
    """

    name = "gk"
    p = 4
    q = 4

    def __init__(self, n: int = 1000, true_theta=(0.0, 0.02, 0.3, 0.1), box=DEFAULT_BOX, obs_seed: int = 0):
        self.n = int(n)
        self.box = tuple(tuple(map(float, b)) for b in box)
        self.true_theta = np.asarray(true_theta, dtype=float)
        self._s_obs = self.simulate(self.true_theta[None, :], as_generator(obs_seed))[0]

    @property
    def observed_summaries(self):
        return self._s_obs

    @property
    def pilot_box(self):
        return self.box

    def prior_sample(self, rng, n):
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        return lo + (hi - lo) * rng.random((n, 4))

    def prior_logdensity(self, theta):
        return _box_logdensity(theta, self.box)

    def simulate(self, theta, rng):
        theta = np.atleast_2d(theta)
        bad = _check_margins(theta)
        if bad.any():
            raise SimulatorError("invalid g-and-k parameters", np.flatnonzero(bad))
        out = np.empty((theta.shape[0], 4))
        for start in range(0, theta.shape[0], 2048):
            t = theta[start:start + 2048]
            z = rng.standard_normal((t.shape[0], self.n))
            y = gk_from_normal(z, t[:, :1], t[:, 1:2], t[:, 2:3], t[:, 3:4])
            out[start:start + 2048] = gk_summaries(y, axis=1)
        return out

    def marginal_selections(self):
        return {0: [0], 1: [1, 2], 2: [3], 3: [2]}

    def config(self):
        return {"n": self.n, "true_theta": self.true_theta.tolist(), "box": [list(b) for b in self.box]}


def sample_wishart_correlation(q: int, rng) -> CorrelationMatrix:
    """Correlation matrix obtained by rescaling ``V ~ Wishart(I_q, q)`` (Bartlett construction)."""
    if q < 2:
        raise ValueError("q must be at least 2")
    # rare near-singular draws are lifted to the 1e-8 eigenvalue floor
    return nearest_correlation(_wishart_correlations(q, 1, as_generator(rng))[0])


def _wishart_correlations(q: int, n: int, rng) -> np.ndarray:
    L = np.zeros((n, q, q))
    df = q - np.arange(q)
    L[:, np.arange(q), np.arange(q)] = np.sqrt(rng.chisquare(df, size=(n, q)))
    rows, cols = np.tril_indices(q, -1)
    L[:, rows, cols] = rng.standard_normal((n, rows.size))
    V = L @ np.transpose(L, (0, 2, 1))
    d = 1.0 / np.sqrt(np.diagonal(V, axis1=1, axis2=2))
    R = V * d[:, :, None] * d[:, None, :]
    R = (R + np.transpose(R, (0, 2, 1))) / 2
    R[:, np.arange(q), np.arange(q)] = 1.0
    return R


def _batch_normal_scores_corr(y, pairs):
    """Normal-scores correlations of column pairs, batched over the first axis."""
    n = y.shape[1]
    ranks = np.argsort(np.argsort(y, axis=1, kind="stable"), axis=1, kind="stable")
    scores = _score_table(n)[ranks]
    denom = np.sum(_score_table(n) ** 2)
    return np.stack([np.einsum("ij,ij->i", scores[:, :, a], scores[:, :, b]) / denom for a, b in pairs], axis=1)


class MultiGkModel(SimulatorModel):
    """``q`` g-and-k margins tied by a Gaussian copula with correlation ``C``.

    Parameter layout: ``(A_j, B_j, g_j, k_j)`` for each margin, then the upper
    triangle of ``C`` row by row, giving ``q (q + 7) / 2`` parameters.
    Summaries: the four :func:`gk_summaries` per margin followed by the
    normal-scores correlation of every column pair.
    """

    name = "multigk"

    def __init__(self, dim: int = 3, n: int = 500, true_theta=None, box=DEFAULT_BOX, obs_seed: int = 0):
        if dim < 2:
            raise ValueError("multivariate g-and-k needs at least two margins")
        self.dim = int(dim)
        self.n = int(n)
        self.box = tuple(tuple(map(float, b)) for b in box)
        self.pairs = list(combinations(range(self.dim), 2))
        self.p = self.q = 4 * self.dim + len(self.pairs)
        if true_theta is None:
            rng = as_generator(obs_seed + 1)
            true_theta = np.concatenate([np.tile([0.0, 0.02, 0.3, 0.1], self.dim),
                                         _wishart_correlations(self.dim, 1, rng)[0][np.triu_indices(self.dim, 1)]])
        self.true_theta = np.asarray(true_theta, dtype=float)
        if self.true_theta.shape != (self.p,):
            raise ValueError(f"true_theta must have length {self.p}")
        self._s_obs = self.simulate(self.true_theta[None, :], as_generator(obs_seed))[0]

    @property
    def observed_summaries(self):
        return self._s_obs

    def margin_params(self, theta) -> np.ndarray:
        return np.asarray(theta)[..., : 4 * self.dim].reshape(*np.shape(theta)[:-1], self.dim, 4)

    def correlation(self, theta) -> np.ndarray:
        theta = np.atleast_2d(theta)
        C = np.repeat(np.eye(self.dim)[None], theta.shape[0], axis=0)
        iu = np.triu_indices(self.dim, 1)
        C[:, iu[0], iu[1]] = theta[:, 4 * self.dim:]
        C[:, iu[1], iu[0]] = theta[:, 4 * self.dim:]
        return C

    def prior_sample(self, rng, n):
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        marg = lo + (hi - lo) * rng.random((n, self.dim, 4))
        R = _wishart_correlations(self.dim, n, rng)
        iu = np.triu_indices(self.dim, 1)
        return np.concatenate([marg.reshape(n, -1), R[:, iu[0], iu[1]]], axis=1)

    def prior_logdensity(self, theta):
        # the rescaled Wishart(I, q) correlation has density proportional to |C|^{-1/2}
        theta = np.atleast_2d(theta)
        out = np.sum(_box_logdensity(self.margin_params(theta), self.box), axis=-1)
        sign, logdet = np.linalg.slogdet(self.correlation(theta))
        ok = (sign > 0) & np.all(np.linalg.eigvalsh(self.correlation(theta)) > 0, axis=-1)
        return np.where(ok, out - 0.5 * np.where(ok, logdet, 0.0), -np.inf)

    def simulate_data(self, theta, rng) -> np.ndarray:
        """Datasets of shape (batch, n, q) for a batch of parameters."""
        theta = np.atleast_2d(theta)
        bad = _check_margins(self.margin_params(theta))
        C = self.correlation(theta)
        eig_ok = np.all(np.isfinite(C), axis=(1, 2))
        eig_ok[eig_ok] = np.linalg.eigvalsh(C[eig_ok])[:, 0] > 0
        bad |= ~eig_ok
        if bad.any():
            raise SimulatorError("invalid multivariate g-and-k parameters", np.flatnonzero(bad))
        L = np.linalg.cholesky(C)
        eta = rng.standard_normal((theta.shape[0], self.n, self.dim)) @ np.transpose(L, (0, 2, 1))
        m = self.margin_params(theta)[:, None, :, :]
        return gk_from_normal(eta, m[..., 0], m[..., 1], m[..., 2], m[..., 3])

    def summarize(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        single = y.ndim == 2
        if single:
            y = y[None]
        marg = gk_summaries(y, axis=1).reshape(y.shape[0], -1)
        corr = _batch_normal_scores_corr(y, self.pairs)
        out = np.concatenate([marg, corr], axis=1)
        return out[0] if single else out

    def simulate(self, theta, rng):
        theta = np.atleast_2d(theta)
        out = np.empty((theta.shape[0], self.q))
        for start in range(0, theta.shape[0], 512):
            out[start:start + 512] = self.summarize(self.simulate_data(theta[start:start + 512], rng))
        return out

    def marginal_selections(self):
        sel = {}
        for j in range(self.dim):
            base = 4 * j
            sel[base] = [base]
            sel[base + 1] = [base + 1, base + 2]
            sel[base + 2] = [base + 3]
            sel[base + 3] = [base + 2]
        for c, _ in enumerate(self.pairs):
            sel[4 * self.dim + c] = [4 * self.dim + c]
        return sel

    def config(self):
        return {"dim": self.dim, "n": self.n, "true_theta": self.true_theta.tolist(),
                "box": [list(b) for b in self.box]}


def simulate_multi_gk(model: MultiGkModel, theta, rng):
    """One dataset (n x q) at ``theta`` and its summary vector.

    Rows are ``y_j = Q_j(Phi(eta_j))`` with ``eta ~ N(0, C)``; since
    ``z(Phi(eta)) = eta`` the transform is applied to ``eta`` directly.
    """
    rng = as_generator(rng)
    y = model.simulate_data(np.asarray(theta)[None, :], rng)[0]
    return y, model.summarize(y)

