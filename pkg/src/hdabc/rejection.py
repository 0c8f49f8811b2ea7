"""Kernel-weighted rejection ABC, distance scaling, bandwidth choice and
semi-automatic (regression) summaries."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._linalg import weighted_lstsq
from .core import NoAcceptancesError, ParticleSet

__all__ = [
    "KernelConfig",
    "DistanceConfig",
    "SemiAutoMap",
    "standardize",
    "select_bandwidth",
    "scaled_distances",
    "kernel_weights",
    "rejection_abc",
    "check_selection",
    "fit_semi_auto",
    "RejectionABC",
    "SemiAutoSummaries",
]

KERNELS = ("uniform", "epanechnikov", "gaussian")


@dataclass(frozen=True)
class KernelConfig:
    """Kernel family plus either an explicit bandwidth or a distance quantile."""

    kind: str = "uniform"
    bandwidth: Optional[float] = None
    quantile: Optional[float] = 0.01

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValueError(f"kernel kind must be one of {KERNELS}, got {self.kind!r}")
        if self.bandwidth is not None:
            if not self.bandwidth > 0:
                raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")
        elif self.quantile is None or not 0 < self.quantile <= 1:
            raise ValueError(f"quantile rule needs alpha in (0, 1], got {self.quantile}")

    def resolve(self, distances) -> float:
        if self.bandwidth is not None:
            return float(self.bandwidth)
        return select_bandwidth(distances, self.quantile)


@dataclass(frozen=True)
class DistanceConfig:
    """Per-coordinate scale factors for a Euclidean distance."""

    scaling: np.ndarray
    constant_columns: tuple = field(default=())

    def __post_init__(self):
        s = np.asarray(self.scaling, dtype=float)
        if s.ndim != 1 or np.any(~(s > 0)):
            raise ValueError("distance scales must be a vector of positive reals")
        object.__setattr__(self, "scaling", s)

    @property
    def warning(self) -> bool:
        return bool(self.constant_columns)

    @classmethod
    def unit(cls, q: int) -> "DistanceConfig":
        return cls(np.ones(q))


@dataclass(frozen=True)
class SemiAutoMap:
    """``coefficients[k] = (intercept, slope_1, ..., slope_q)`` for parameter k."""

    coefficients: np.ndarray

    def __call__(self, summaries) -> np.ndarray:
        S = np.atleast_2d(np.asarray(summaries, dtype=float))
        return self.coefficients[:, 0] + S @ self.coefficients[:, 1:].T


def standardize(particles: ParticleSet) -> DistanceConfig:
    """Scale every summary column by the inverse of its sample standard deviation
    (``n - 1`` denominator). Constant columns keep scale 1 and are flagged."""
    if particles.r < 2:
        raise ValueError("standardize needs at least two particles")
    sd = np.std(particles.summaries, axis=0, ddof=1)
    constant = tuple(int(j) for j in np.flatnonzero(~(sd > 0)))
    if constant:
        warnings.warn(f"summary columns {list(constant)} are constant; using scale 1",
                      RuntimeWarning, stacklevel=2)
    scale = np.ones_like(sd)
    ok = sd > 0
    scale[ok] = 1.0 / sd[ok]
    return DistanceConfig(scale, constant)


def select_bandwidth(distances, alpha: float) -> float:
    """Lower empirical ``alpha``-quantile of the distances (never below the minimum)."""
    d = np.asarray(distances, dtype=float).ravel()
    if d.size == 0:
        raise ValueError("no distances given")
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    return float(np.quantile(d, alpha, method="lower"))


def check_selection(selection, q: int) -> np.ndarray:
    if selection is None:
        return np.arange(q)
    idx = np.asarray(list(selection), dtype=int)
    if idx.ndim != 1 or idx.size == 0:
        raise ValueError("a summary selection needs at least one index")
    if np.any(idx < 0) or np.any(idx >= q):
        raise ValueError(f"selection indices must lie in [0, {q}), got {idx.tolist()}")
    if np.unique(idx).size != idx.size:
        raise ValueError(f"selection has duplicate indices: {idx.tolist()}")
    return idx


def scaled_distances(summaries, s_obs, selection=None, dist: Optional[DistanceConfig] = None) -> np.ndarray:
    S = np.asarray(summaries, dtype=float)
    s_obs = np.asarray(s_obs, dtype=float)
    idx = check_selection(selection, S.shape[1])
    diff = S[:, idx] - s_obs[idx]
    if dist is not None:
        diff = diff * dist.scaling[idx]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def kernel_weights(distances, h: float, kind: str = "uniform") -> np.ndarray:
    u = np.asarray(distances, dtype=float) / h
    if kind == "uniform":
        return (u <= 1.0).astype(float)
    if kind == "epanechnikov":
        return np.clip(1.0 - u * u, 0.0, None)
    if kind == "gaussian":
        return np.exp(-0.5 * u * u)
    raise ValueError(f"unknown kernel {kind!r}")


def rejection_abc(particles: ParticleSet, s_obs, selection=None, kernel: KernelConfig = KernelConfig(),
                  dist: Optional[DistanceConfig] = None) -> ParticleSet:
    """Weight particles by ``K_h(||s - s_obs||)`` over the selected summaries.

    Particles with zero weight are dropped (compact kernels). The returned set
    records the selection, bandwidth and observed summaries in its metadata.

    Raises
    ------
    NoAcceptancesError
        If every weight is zero.
    """
    s_obs = np.asarray(s_obs, dtype=float)
    if s_obs.shape != (particles.q,) or not np.all(np.isfinite(s_obs)):
        raise ValueError(f"s_obs must be a finite vector of length {particles.q}")
    idx = check_selection(selection, particles.q)
    d = scaled_distances(particles.summaries, s_obs, idx, dist)
    h = kernel.resolve(d)
    w = kernel_weights(d, h, kernel.kind)
    keep = np.flatnonzero(w > 0)
    if keep.size == 0:
        raise NoAcceptancesError(h, float(d.min()))
    return ParticleSet(
        particles.theta[keep], particles.summaries[keep], w[keep],
        {**particles.meta, "selection": idx.tolist(), "bandwidth": h, "kernel": kernel.kind,
         "s_obs": s_obs.tolist(), "accepted": int(keep.size)},
    )


def fit_semi_auto(pilot: ParticleSet) -> SemiAutoMap:
    """Least-squares regression of each parameter on ``(1, s)``.

    The fitted values estimate posterior means and serve as one summary per
    parameter.
    """
    if pilot.r <= pilot.q + 1:
        raise ValueError(f"need more than q+1={pilot.q + 1} pilot particles, got {pilot.r}")
    coef, intercept, _ = weighted_lstsq(pilot.summaries, pilot.theta)
    return SemiAutoMap(np.column_stack([intercept, coef.T]))


class RejectionABC(BaseEstimator):
    """Rejection ABC estimator over a reference table of simulated particles.

    Parameters
    ----------
    kernel : {"uniform", "epanechnikov", "gaussian"}, default="uniform"
    quantile : float, default=0.01
        Bandwidth is the lower ``quantile`` of the scaled distances.
    bandwidth : float, optional
        Explicit bandwidth; overrides ``quantile``.
    selection : sequence of int, optional
        Summary indices entering the distance; all when omitted.
    scale : {"sd", "none"} or array-like, default="sd"
        Distance scaling: inverse sample standard deviation, unit, or explicit.

    Attributes
    ----------
    distance_ : DistanceConfig
    reference_ : ParticleSet
    """

    def __init__(self, kernel="uniform", quantile=0.01, bandwidth=None, selection=None, scale="sd"):
        self.kernel = kernel
        self.quantile = quantile
        self.bandwidth = bandwidth
        self.selection = selection
        self.scale = scale

    def fit(self, particles: ParticleSet, y=None):
        self.reference_ = particles
        self.distance_ = make_distance(particles, self.scale)
        return self

    def sample(self, s_obs) -> ParticleSet:
        check_is_fitted(self, "reference_")
        kernel = KernelConfig(self.kernel, self.bandwidth, self.quantile)
        return rejection_abc(self.reference_, s_obs, self.selection, kernel, self.distance_)


def make_distance(particles: ParticleSet, scale) -> DistanceConfig:
    if isinstance(scale, str):
        if scale == "sd":
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                return standardize(particles)
        if scale == "none":
            return DistanceConfig.unit(particles.q)
        raise ValueError(f"scale must be 'sd', 'none' or an array, got {scale!r}")
    return DistanceConfig(np.asarray(scale, dtype=float))


class SemiAutoSummaries(TransformerMixin, BaseEstimator):
    """Project raw summaries onto fitted posterior-mean estimates (one per parameter).

    ``fit(S, theta)`` regresses each parameter on the summaries of a pilot
    run; ``transform(S)`` returns the ``p`` regression predictions.
    """

    def fit(self, X, y):
        X = check_array(X)
        y = check_array(y, ensure_2d=False)
        if y.ndim == 1:
            y = y[:, None]
        self.map_ = fit_semi_auto(ParticleSet(y, X))
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "map_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} summaries, got {X.shape[1]}")
        return self.map_(X)
