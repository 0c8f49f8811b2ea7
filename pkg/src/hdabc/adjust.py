"""Post-hoc particle adjustments: linear regression adjustment and the
rank-preserving marginal adjustment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._linalg import weighted_lstsq
from .core import ParticleSet
from .rejection import check_selection

__all__ = [
    "RegressionAdjustment",
    "MarginalSamples",
    "regression_adjust",
    "rank_matrix",
    "column_ranks",
    "plotting_position_quantile",
    "marginal_adjust",
    "discard_violations",
    "LinearRegressionAdjuster",
]


@dataclass(frozen=True)
class RegressionAdjustment:
    coefficients: np.ndarray  # (p, |selection|)
    intercepts: np.ndarray
    selection: tuple
    ridge: float = 0.0

    def apply(self, theta, summaries, s_obs) -> np.ndarray:
        idx = list(self.selection)
        shift = (np.asarray(summaries)[:, idx] - np.asarray(s_obs)[idx]) @ self.coefficients.T
        return np.asarray(theta) - shift


@dataclass(frozen=True)
class MarginalSamples:
    """Per-parameter marginal samples, each stored sorted ascending."""

    samples: tuple

    @classmethod
    def from_columns(cls, columns: Sequence) -> "MarginalSamples":
        cols = []
        for c in columns:
            c = np.sort(np.asarray(c, dtype=float).ravel())
            c.setflags(write=False)
            cols.append(c)
        return cls(tuple(cols))

    @classmethod
    def from_particle_sets(cls, sets: Sequence[ParticleSet], columns: Optional[Sequence[int]] = None):
        """Column ``j`` of ``sets[j]`` (or ``columns[j]``) becomes marginal ``j``."""
        columns = range(len(sets)) if columns is None else columns
        return cls.from_columns([s.theta[:, c] if s.p > 1 else s.theta[:, 0]
                                 for s, c in zip(sets, columns)])

    @property
    def p(self) -> int:
        return len(self.samples)


def fit_regression_adjustment(particles: ParticleSet, selection=None) -> RegressionAdjustment:
    idx = check_selection(selection, particles.q)
    if particles.r <= idx.size + 1:
        raise ValueError(f"regression adjustment needs more than {idx.size + 1} particles, got {particles.r}")
    coef, intercept, ridge = weighted_lstsq(particles.summaries[:, idx], particles.theta, particles.weights)
    return RegressionAdjustment(coef.T, intercept, tuple(int(i) for i in idx), ridge)


def regression_adjust(particles: ParticleSet, s_obs=None, selection=None) -> ParticleSet:
    """Shift particles by ``theta - B (s - s_obs)`` where ``B`` comes from a
    weighted least-squares regression of theta on the selected summaries.

    ``s_obs`` and ``selection`` default to the values recorded by
    :func:`~hdabc.rejection.rejection_abc` in the particle metadata.
    """
    if s_obs is None:
        if "s_obs" not in particles.meta:
            raise ValueError("s_obs not given and not recorded in the particle metadata")
        s_obs = particles.meta["s_obs"]
    s_obs = np.asarray(s_obs, dtype=float)
    if selection is None:
        selection = particles.meta.get("selection")
    adj = fit_regression_adjustment(particles, selection)
    theta = adj.apply(particles.theta, particles.summaries, s_obs)
    return particles.replace(theta=theta, adjustment={"type": "regression", "selection": list(adj.selection),
                                                      "ridge": adj.ridge})


def column_ranks(x) -> np.ndarray:
    """1-based ranks, ties broken by position."""
    x = np.asarray(x)
    ranks = np.empty(x.shape[0], dtype=np.int64)
    ranks[np.argsort(x, kind="stable")] = np.arange(1, x.shape[0] + 1)
    return ranks


def rank_matrix(particles) -> np.ndarray:
    """``R[k, j]`` is the rank of ``theta[k, j]`` within column ``j``."""
    theta = particles.theta if isinstance(particles, ParticleSet) else np.asarray(particles)
    return np.column_stack([column_ranks(theta[:, j]) for j in range(theta.shape[1])])


def plotting_position_quantile(sorted_sample, u) -> np.ndarray:
    """Empirical quantile interpolating ``(k / (n + 1), x_(k))``.

    At ``u = k / (n + 1)`` this returns the k-th order statistic exactly. Beyond
    the first and last plotting positions the end segments are extended
    linearly so the map stays strictly increasing.
    """
    x = np.asarray(sorted_sample, dtype=float)
    n = x.size
    u = np.asarray(u, dtype=float)
    pos = np.arange(1, n + 1) / (n + 1)
    out = np.interp(u, pos, x)
    step = 1.0 / (n + 1)
    lo = u < pos[0]
    hi = u > pos[-1]
    if lo.any():
        out[lo] = x[0] + (x[1] - x[0]) / step * (u[lo] - pos[0])
    if hi.any():
        out[hi] = x[-1] + (x[-1] - x[-2]) / step * (u[hi] - pos[-1])
    return out


def marginal_adjust(joint: ParticleSet, marginals) -> ParticleSet:
    """Replace each margin of ``joint`` by a marginal sample, keeping ranks.

    Particle ``k`` gets ``Q_j(R(j, k) / (r + 1))`` in coordinate ``j``, with
    ``Q_j`` the plotting-position quantile of marginal sample ``j``.  When the
    marginal sample has ``r`` values this is its ``R(j, k)``-th order statistic.
    """
    if not isinstance(marginals, MarginalSamples):
        marginals = MarginalSamples.from_columns(marginals)
    if marginals.p != joint.p:
        raise ValueError(f"joint sample has p={joint.p} but {marginals.p} marginal samples were given")
    for j, m in enumerate(marginals.samples):
        if m.size < 2:
            raise ValueError(f"marginal sample {j} needs at least 2 values")
    R = rank_matrix(joint)
    u = R / (joint.r + 1)
    theta = np.column_stack([plotting_position_quantile(m, u[:, j]) for j, m in enumerate(marginals.samples)])
    return joint.replace(theta=theta, adjustment={"type": "marginal",
                                                  "sizes": [int(m.size) for m in marginals.samples]})


def discard_violations(particles: ParticleSet, is_valid: Callable[[np.ndarray], np.ndarray]) -> ParticleSet:
    """Drop particles whose parameters fail a support constraint (e.g. crossing quantile curves)."""
    keep = np.flatnonzero(np.asarray(is_valid(particles.theta), dtype=bool))
    if keep.size == 0:
        raise ValueError("every particle violates the constraint")
    out = particles.subset(keep)
    return out.replace(adjustment={"type": "discard", "dropped": int(particles.r - keep.size)})


class LinearRegressionAdjuster(BaseEstimator):
    """Estimator form of the regression adjustment.

    ``fit(particles, s_obs)`` estimates the weighted regression;
    ``transform(particles)`` shifts the particles towards ``s_obs``.
    """

    def __init__(self, selection=None):
        self.selection = selection

    def fit(self, particles: ParticleSet, s_obs=None):
        self.s_obs_ = np.asarray(particles.meta["s_obs"] if s_obs is None else s_obs, dtype=float)
        sel = self.selection if self.selection is not None else particles.meta.get("selection")
        self.adjustment_ = fit_regression_adjustment(particles, sel)
        return self

    def transform(self, particles: ParticleSet) -> ParticleSet:
        check_is_fitted(self, "adjustment_")
        theta = self.adjustment_.apply(particles.theta, particles.summaries, self.s_obs_)
        return particles.replace(theta=theta, adjustment={"type": "regression",
                                                          "selection": list(self.adjustment_.selection)})

    def fit_transform(self, particles: ParticleSet, s_obs=None) -> ParticleSet:
        return self.fit(particles, s_obs).transform(particles)
