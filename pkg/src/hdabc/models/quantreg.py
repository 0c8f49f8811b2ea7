"""Multiple non-crossing quadratic quantile regressions with a linearly
interpolated likelihood."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, stats

from ..core import SimulatorError, SimulatorModel, as_generator

__all__ = [
    "DEFAULT_LEVELS",
    "QuantileCurveParams",
    "quantile_curves",
    "curves_monotone",
    "smoothed_pinball_loss",
    "fit_quantile_curve",
    "simulate_quantile_regression",
    "interpolate_curves",
    "qr_summaries",
    "qr_marginal_selections",
    "QuantileRegressionModel",
    "load_xy_csv",
]

DEFAULT_LEVELS = (0.1, 0.2, 0.3, 0.7, 0.75, 0.8, 0.95)
N_DATA_QUANTILES = 100
N_NEAREST_QUANTILES = 20


@dataclass(frozen=True)
class QuantileCurveParams:
    """Quadratic quantile curves ``Q(tau|x) = alpha + beta x + eta x^2`` at each level."""

    levels: tuple
    alpha: tuple
    beta: tuple
    eta: tuple
    x_obs: tuple
    y_obs: tuple

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=float)
        if np.any(np.diff(lv) <= 0) or lv[0] <= 0 or lv[-1] >= 1:
            raise ValueError("levels must be strictly increasing inside (0, 1)")
        if not (len(self.alpha) == len(self.beta) == len(self.eta) == lv.size):
            raise ValueError("one (alpha, beta, eta) triple per level is required")
        if len(self.x_obs) != len(self.y_obs):
            raise ValueError("x_obs and y_obs differ in length")

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta, self.eta])

    @classmethod
    def from_theta(cls, theta, levels, x_obs, y_obs) -> "QuantileCurveParams":
        m = len(levels)
        t = np.asarray(theta, dtype=float)
        return cls(tuple(levels), tuple(t[:m]), tuple(t[m:2 * m]), tuple(t[2 * m:]),
                   tuple(np.asarray(x_obs, float)), tuple(np.asarray(y_obs, float)))


def quantile_curves(theta, x, m: int) -> np.ndarray:
    """Curve values; shape (..., m, n) for theta of shape (..., 3m)."""
    t = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    a, b, c = t[..., :m, None], t[..., m:2 * m, None], t[..., 2 * m:3 * m, None]
    return a + b * x + c * x * x


def curves_monotone(theta, x, m: int) -> np.ndarray:
    """True where the curves are strictly ordered in level at every ``x``."""
    Q = quantile_curves(theta, x, m)
    return np.all(np.diff(Q, axis=-2) > 0, axis=(-2, -1))


def smoothed_pinball_loss(r, tau: float, delta: float):
    """Huber-smoothed check loss and its derivative."""
    r = np.asarray(r, dtype=float)
    inner = np.abs(r) <= delta
    loss = np.where(r >= 0, tau * r, (tau - 1) * r)
    loss = np.where(inner, r * r / (4 * delta) + (tau - 0.5) * r + delta / 4, loss)
    grad = np.where(r >= 0, tau, tau - 1.0)
    grad = np.where(inner, r / (2 * delta) + tau - 0.5, grad)
    return loss, grad


def fit_quantile_curve(x, y, tau: float, smoothing: float = 1e-4) -> np.ndarray:
    """``(alpha, beta, eta)`` minimising the smoothed pinball loss at level ``tau``.

    The smoothing width is ``smoothing * sd(y)``. Optimisation runs in a
    centred and scaled covariate basis, started from least squares.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.unique(x).size < 3:
        raise ValueError("a quadratic quantile curve needs at least 3 distinct covariate values")
    mx, sx = x.mean(), x.std()
    xs = (x - mx) / sx
    D = np.column_stack([np.ones_like(xs), xs, xs * xs])
    sy = y.std() if y.std() > 0 else 1.0
    ys = y / sy
    delta = smoothing
    n = y.size

    def fun(c):
        loss, grad = smoothed_pinball_loss(ys - D @ c, tau, delta)
        return loss.sum() / n, -(D.T @ grad) / n

    c0 = np.linalg.lstsq(D, ys, rcond=None)[0]
    c0[0] += np.quantile(ys - D @ c0, tau)
    res = optimize.minimize(fun, c0, jac=True, method="L-BFGS-B",
                            options={"maxiter": 2000, "gtol": 1e-12, "ftol": 1e-15})
    a, b, c = res.x * sy
    return np.array([a - b * mx / sx + c * mx * mx / sx ** 2, b / sx - 2 * c * mx / sx ** 2, c / sx ** 2])


def _data_quantile_levels() -> np.ndarray:
    return np.arange(1, N_DATA_QUANTILES + 1) / (N_DATA_QUANTILES + 1)


def qr_summaries(y, x, levels=DEFAULT_LEVELS, smoothing: float = 1e-4) -> np.ndarray:
    """``(alpha_hat..., beta_hat..., eta_hat..., pu..., pl..., q_1(y)..q_100(y))``.

    ``pu`` / ``pl`` are the fractions of points strictly above / below each
    fitted curve; ``q_k`` is the empirical quantile at level ``k / 101``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.size < 30:
        raise ValueError("at least 30 observations are needed")
    fits = np.array([fit_quantile_curve(x, y, t, smoothing) for t in levels])
    Q = quantile_curves(fits.T.ravel(), x, len(levels))
    pu = np.mean(y[None, :] > Q, axis=1)
    pl = np.mean(y[None, :] < Q, axis=1)
    qs = np.quantile(y, _data_quantile_levels())
    return np.concatenate([fits[:, 0], fits[:, 1], fits[:, 2], pu, pl, qs])


def qr_marginal_selections(levels=DEFAULT_LEVELS) -> dict:
    """Coefficient estimate, ``pu``, ``pl`` and the 20 data quantiles nearest each level."""
    m = len(levels)
    qlev = _data_quantile_levels()
    sel = {}
    for i, tau in enumerate(levels):
        near = np.argsort(np.abs(qlev - tau), kind="stable")[:N_NEAREST_QUANTILES]
        shared = [3 * m + i, 4 * m + i] + sorted((5 * m + near).tolist())
        for block in range(3):
            sel[block * m + i] = [block * m + i] + shared
    return sel


def interpolate_curves(Q, levels, u) -> np.ndarray:
    """Linear interpolation in level between curve values ``Q`` (m, n) at ``u`` in ``[tau_1, tau_m]``."""
    lv = np.asarray(levels, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any((u < lv[0]) | (u > lv[-1])):
        raise ValueError("u must lie within the outer levels")
    j = np.clip(np.searchsorted(lv, u, side="right") - 1, 0, lv.size - 2)
    cols = np.arange(u.size)
    lo_q, hi_q = Q[j, cols], Q[j + 1, cols]
    return lo_q + (hi_q - lo_q) / (lv[j + 1] - lv[j]) * (u - lv[j])


def simulate_quantile_regression(theta, x, levels, y_mean: float, y_sd: float, rng) -> np.ndarray:
    """Synthetic responses from the linearly interpolated quantile likelihood.

    Inside ``(tau_j, tau_{j+1})`` the response interpolates linearly between the
    two curves. Below ``tau_1`` (above ``tau_m``) it is a normal draw with mean
    ``y_mean`` and sd ``3 y_sd`` restricted to lie below the lowest (above the
    highest) curve.

    Raises
    ------
    SimulatorError
        If the curves cross at any covariate value.
    """
    rng = as_generator(rng)
    lv = np.asarray(levels, dtype=float)
    m = lv.size
    x = np.asarray(x, dtype=float)
    Q = quantile_curves(theta, x, m)
    if not np.all(np.diff(Q, axis=0) > 0):
        raise SimulatorError("quantile curves cross", [0])
    n = x.size
    u = rng.random(n)
    y = np.empty(n)
    mid = (u >= lv[0]) & (u <= lv[-1])
    y[mid] = interpolate_curves(Q[:, mid], lv, u[mid])
    scale = 3 * y_sd
    low = u < lv[0]
    if low.any():
        b = (Q[0, low] - y_mean) / scale
        y[low] = stats.truncnorm.rvs(-np.inf, b, loc=y_mean, scale=scale, random_state=rng)
    high = u > lv[-1]
    if high.any():
        a = (Q[-1, high] - y_mean) / scale
        y[high] = stats.truncnorm.rvs(a, np.inf, loc=y_mean, scale=scale, random_state=rng)
    return y


def load_xy_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Two-column (x, y) CSV, header optional."""
    text = Path(path).read_text().splitlines()
    try:
        float(text[0].split(",")[0])
        skip = 0
    except ValueError:
        skip = 1
    data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns (x, y)")
    return data[:, 0], data[:, 1]


def _synthetic_data(n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    x = np.sort(rng.uniform(0.5, 6.0, n))
    y = 2.0 + 1.2 * x - 0.08 * x * x + (0.6 + 0.15 * x) * rng.standard_normal(n)
    return x, y


class QuantileRegressionModel(SimulatorModel):
    """Bayesian multiple quantile regression with quadratic curves.

    Parameters are ``(alpha_tau..., beta_tau..., eta_tau...)`` over ``levels``.
    The prior is a multivariate normal restricted to non-crossing curves at the
    observed covariates; its mean and covariance default to the smoothed
    pinball fits on the observed data and their bootstrap covariance.

    Parameters
    ----------
    x_obs, y_obs : array-like, optional
        Observed data. When omitted, ``data_csv`` is read, or else a synthetic
        data set of ``n`` points is generated from ``obs_seed``.
    """

    name = "qr"

    def __init__(self, x_obs=None, y_obs=None, levels=DEFAULT_LEVELS, data_csv: Optional[str] = None,
                 n: int = 298, prior_mean=None, prior_cov=None, n_bootstrap: int = 50, obs_seed: int = 0):
        self.levels = tuple(float(t) for t in levels)
        self.m = len(self.levels)
        self.data_csv = data_csv
        if x_obs is None and data_csv is not None:
            x_obs, y_obs = load_xy_csv(data_csv)
        elif x_obs is None:
            x_obs, y_obs = _synthetic_data(n, as_generator(obs_seed))
        self.x_obs = np.asarray(x_obs, dtype=float)
        self.y_obs = np.asarray(y_obs, dtype=float)
        self.n = self.x_obs.size
        self.obs_seed = obs_seed
        self.p = 3 * self.m
        self.q = 5 * self.m + N_DATA_QUANTILES
        self._s_obs = qr_summaries(self.y_obs, self.x_obs, self.levels)
        if prior_mean is None:
            prior_mean = self._s_obs[: self.p]
        if prior_cov is None:
            if n_bootstrap <= self.p:
                raise ValueError(f"n_bootstrap must exceed p={self.p} for a nonsingular prior covariance")
            prior_cov = self._bootstrap_cov(n_bootstrap, as_generator(obs_seed + 1))
        self.prior_mean = np.asarray(prior_mean, dtype=float)
        self.prior_cov = np.asarray(prior_cov, dtype=float)
        self._prior = stats.multivariate_normal(self.prior_mean, self.prior_cov, allow_singular=False)

    def _bootstrap_cov(self, n_boot: int, rng) -> np.ndarray:
        draws = []
        for _ in range(n_boot):
            idx = rng.integers(0, self.n, self.n)
            fits = np.array([fit_quantile_curve(self.x_obs[idx], self.y_obs[idx], t) for t in self.levels])
            draws.append(np.concatenate([fits[:, 0], fits[:, 1], fits[:, 2]]))
        cov = np.cov(np.array(draws), rowvar=False)
        return cov + 1e-10 * np.trace(cov) / self.p * np.eye(self.p)

    @property
    def observed_summaries(self):
        return self._s_obs

    def is_valid(self, theta) -> np.ndarray:
        return curves_monotone(theta, self.x_obs, self.m)

    def prior_sample(self, rng, n):
        out = np.empty((0, self.p))
        for _ in range(10_000):
            draw = rng.multivariate_normal(self.prior_mean, self.prior_cov, size=max(n, 64), method="cholesky")
            out = np.vstack([out, draw[self.is_valid(draw)]])
            if out.shape[0] >= n:
                return out[:n]
        raise RuntimeError("prior rejection sampler could not find non-crossing curves")

    def prior_logdensity(self, theta):
        theta = np.atleast_2d(theta)
        lp = self._prior.logpdf(theta)
        return np.where(self.is_valid(theta), lp, -np.inf)

    def simulate(self, theta, rng):
        theta = np.atleast_2d(theta)
        bad = ~self.is_valid(theta)
        if bad.any():
            raise SimulatorError("quantile curves cross", np.flatnonzero(bad))
        ybar, ysd = self.y_obs.mean(), self.y_obs.std(ddof=1)
        out = np.empty((theta.shape[0], self.q))
        for i, t in enumerate(theta):
            y = simulate_quantile_regression(t, self.x_obs, self.levels, ybar, ysd, rng)
            out[i] = qr_summaries(y, self.x_obs, self.levels)
        return out

    def marginal_selections(self):
        return qr_marginal_selections(self.levels)

    def config(self):
        return {"levels": list(self.levels), "n": self.n, "data_csv": self.data_csv, "obs_seed": self.obs_seed}
