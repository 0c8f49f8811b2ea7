"""Twisted-normal toy model: ``y ~ N(theta, I_p)`` under a banana-shaped prior."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core import SimulatorModel
from ..grid import GridDensity2D

__all__ = [
    "TwistedNormalParams",
    "TwistedNormal",
    "twisted_prior_logdensity",
    "twisted_log_normalizer",
    "twisted_true_bivariate_margin",
]


@dataclass(frozen=True)
class TwistedNormalParams:
    p: int = 5
    b: float = 0.1
    y_obs: Optional[tuple] = None

    def __post_init__(self):
        if self.p < 2:
            raise ValueError(f"twisted normal model needs p >= 2, got {self.p}")
        y = (10.0,) + (0.0,) * (self.p - 1) if self.y_obs is None else tuple(float(v) for v in self.y_obs)
        if len(y) != self.p:
            raise ValueError(f"y_obs has length {len(y)}, expected {self.p}")
        object.__setattr__(self, "y_obs", y)


def twisted_prior_logdensity(params: TwistedNormalParams, theta) -> np.ndarray:
    """``-t1^2/200 - (t2 - b t1^2 + 100 b)^2 / 2 - sum_{j>=3} tj^2`` (unnormalised)."""
    t = np.asarray(theta, dtype=float)
    if t.shape[-1] != params.p:
        raise ValueError(f"theta must have length {params.p}")
    b = params.b
    out = -t[..., 0] ** 2 / 200 - (t[..., 1] - b * t[..., 0] ** 2 + 100 * b) ** 2 / 2
    if params.p > 2:
        out = out - np.sum(t[..., 2:] ** 2, axis=-1)
    return out


def twisted_log_normalizer(params: TwistedNormalParams) -> float:
    """Log of the integral of ``exp(twisted_prior_logdensity)`` over R^p."""
    return 0.5 * np.log(200 * np.pi) + 0.5 * np.log(2 * np.pi) + (params.p - 2) * 0.5 * np.log(np.pi)


def _bivariate_log_posterior(params: TwistedNormalParams, t1, t2):
    b = params.b
    y1, y2 = params.y_obs[0], params.y_obs[1]
    return (-t1 ** 2 / 200 - (t2 - b * t1 ** 2 + 100 * b) ** 2 / 2
            - (y1 - t1) ** 2 / 2 - (y2 - t2) ** 2 / 2)


def twisted_true_bivariate_margin(params: TwistedNormalParams, grid_size: int = 400,
                                  width: float = 6.0) -> GridDensity2D:
    """Exact ``(theta_1, theta_2)`` posterior margin tabulated on a grid.

    The coordinates ``j >= 3`` are a priori independent of the first two and
    each meets its own Gaussian likelihood, so they integrate out to a
    constant. The grid spans ``width`` standard deviations around the
    posterior mean, located with a coarse first pass.
    """
    y1, y2, b = params.y_obs[0], params.y_obs[1], params.b
    t1 = np.linspace(y1 - 12, y1 + 12, 801)
    centre = (b * t1 ** 2 - 100 * b + y2) / 2
    t2 = np.linspace(centre.min() - 12, centre.max() + 12, 1201)
    coarse = GridDensity2D.from_log(t1, t2, _bivariate_log_posterior(params, t1[:, None], t2[None, :]))
    mean, cov = coarse.moments()
    sd = np.sqrt(np.diag(cov))
    x = np.linspace(mean[0] - width * sd[0], mean[0] + width * sd[0], grid_size)
    y = np.linspace(mean[1] - width * sd[1], mean[1] + width * sd[1], grid_size)
    return GridDensity2D.from_log(x, y, _bivariate_log_posterior(params, x[:, None], y[None, :]))


class TwistedNormal(SimulatorModel):
    """Gaussian data with unit covariance; the summaries are the data themselves.

    Parameters
    ----------
    p : int, default=5
    b : float, default=0.1
        Twist coefficient of the prior.
    y_obs : sequence of float, optional
        Observed data; ``(10, 0, ..., 0)`` when omitted.

    Notes
    -----
    The default marginal selections use ``(y_1, y_2)`` for both ``theta_1``
    and ``theta_2`` because the twist couples them a priori: ``y_1`` carries
    information about ``theta_2`` and vice versa. Every other ``theta_j`` uses
    ``y_j`` alone.
    """

    name = "twisted"

    def __init__(self, p: int = 5, b: float = 0.1, y_obs=None):
        self.params = TwistedNormalParams(p, b, None if y_obs is None else tuple(y_obs))
        self.p = self.q = p

    @property
    def b(self) -> float:
        return self.params.b

    @property
    def observed_summaries(self) -> np.ndarray:
        return np.array(self.params.y_obs)

    def prior_sample(self, rng, n):
        t = np.empty((n, self.p))
        t[:, 0] = 10.0 * rng.standard_normal(n)
        t[:, 1] = self.b * t[:, 0] ** 2 - 100 * self.b + rng.standard_normal(n)
        if self.p > 2:
            t[:, 2:] = np.sqrt(0.5) * rng.standard_normal((n, self.p - 2))
        return t

    def prior_logdensity(self, theta):
        return twisted_prior_logdensity(self.params, theta)

    def simulate(self, theta, rng):
        theta = np.atleast_2d(theta)
        return theta + rng.standard_normal(theta.shape)

    def loglikelihood(self, theta, y=None) -> np.ndarray:
        y = self.observed_summaries if y is None else np.asarray(y)
        d = np.atleast_2d(theta) - y
        return -0.5 * np.sum(d * d, axis=-1) - 0.5 * self.p * np.log(2 * np.pi)

    def marginal_selections(self):
        sel = {0: [0, 1], 1: [0, 1]}
        sel.update({j: [j] for j in range(2, self.p)})
        return sel

    def true_bivariate_margin(self, grid_size: int = 400) -> GridDensity2D:
        return twisted_true_bivariate_margin(self.params, grid_size)

    def config(self):
        return {"p": self.p, "b": self.b, "y_obs": list(self.params.y_obs)}
