"""Truncated-normal proposal built from a pilot rejection run."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..core import RngStream, SimulatorModel, as_generator, generate_particles
from ..rejection import scaled_distances, standardize

__all__ = ["PilotProposal", "build_pilot", "box_sampler"]


@dataclass(frozen=True)
class PilotProposal:
    """``N(mean, cov)`` restricted to ``(theta - mean)' cov^{-1} (theta - mean) < radius^2``."""

    mean: np.ndarray
    cov: np.ndarray
    radius: float = 3.0

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match the mean")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", np.linalg.cholesky(cov))

    @property
    def p(self) -> int:
        return self.mean.size

    def mahalanobis2(self, theta) -> np.ndarray:
        D = np.atleast_2d(theta) - self.mean
        sol = np.linalg.solve(self._chol, D.T)
        return np.sum(sol * sol, axis=0)

    def contains(self, theta) -> np.ndarray:
        return self.mahalanobis2(theta) < self.radius ** 2

    def sample(self, rng, n: int) -> np.ndarray:
        """Rejection sampling from the untruncated normal."""
        rng = as_generator(rng)
        out = []
        have = 0
        while have < n:
            z = rng.standard_normal((max(2 * (n - have), 16), self.p))
            cand = self.mean + z @ self._chol.T
            # filter with the same arithmetic as ``contains``
            keep = cand[self.contains(cand)]
            out.append(keep)
            have += keep.shape[0]
        return np.concatenate(out)[:n]

    __call__ = sample

    def logpdf(self, theta) -> np.ndarray:
        m2 = self.mahalanobis2(theta)
        logdet = 2 * np.sum(np.log(np.diag(self._chol)))
        mass = stats.chi2.cdf(self.radius ** 2, self.p)
        lp = -0.5 * (m2 + logdet + self.p * np.log(2 * np.pi)) - np.log(mass)
        return np.where(m2 < self.radius ** 2, lp, -np.inf)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist(), "radius": self.radius}


def box_sampler(box):
    lo, hi = np.asarray(box, dtype=float).T
    return lambda rng, n: rng.uniform(lo, hi, (n, lo.size))


def build_pilot(model: SimulatorModel, n: int, threshold: float, rng: RngStream, box=None,
                s_obs=None) -> PilotProposal:
    """Moments of the pilot draws whose sd-scaled summary distance is within ``threshold``.

    Draws come from the uniform ``box`` (the model's ``pilot_box`` when
    omitted, else the prior).

    Raises
    ------
    ValueError
        If fewer than ``p + 1`` draws are retained.
    """
    if n < 10 * model.p:
        raise ValueError(f"pilot needs n >= 10 p = {10 * model.p}, got {n}")
    box = getattr(model, "pilot_box", None) if box is None else box
    sampler = box_sampler(box) if box is not None else None
    pilot = generate_particles(model, n, rng, proposal=sampler)
    s_obs = model.observed_summaries if s_obs is None else np.asarray(s_obs, dtype=float)
    d = scaled_distances(pilot.summaries, s_obs, dist=standardize(pilot))
    kept = pilot.theta[d <= threshold]
    if kept.shape[0] < model.p + 1:
        raise ValueError(f"only {kept.shape[0]} pilot draws within distance {threshold}; need at least {model.p + 1}")
    return PilotProposal(kept.mean(axis=0), np.cov(kept, rowvar=False).reshape(model.p, model.p))
