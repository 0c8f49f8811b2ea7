"""Gaussian copula ABC: kernel-density margins, normal-scores correlations and
the meta-Gaussian posterior approximation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from scipy.special import ndtr, ndtri
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .adjust import fit_regression_adjustment
from .core import ParticleSet, RngStream, SimulatorModel, as_generator, generate_particles
from .rejection import KernelConfig, check_selection, make_distance, rejection_abc

__all__ = [
    "GridMargin",
    "ParametricMargin",
    "CorrelationMatrix",
    "MetaGaussian",
    "silverman_bandwidth",
    "fit_margin_kde",
    "normal_scores",
    "normal_scores_correlation",
    "nearest_correlation",
    "meta_gaussian_logdensity",
    "sample_meta_gaussian",
    "GaussianCopulaABC",
    "copula_abc",
    "PROB_CLAMP",
]

PROB_CLAMP = 1e-12
MIN_EIGENVALUE = 1e-8


class GridMargin:
    """Univariate density tabulated on a grid.

    Between nodes the density is linear, the CDF is its exact integral
    (piecewise quadratic) and :meth:`ppf` inverts that quadratic, so
    ``cdf``, ``pdf`` and ``ppf`` are mutually consistent.
    """

    def __init__(self, grid, density):
        grid = np.asarray(grid, dtype=float)
        f = np.asarray(density, dtype=float)
        if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise ValueError("margin grid must be strictly increasing with at least 2 points")
        if f.shape != grid.shape or np.any(f < 0) or not np.all(np.isfinite(f)):
            raise ValueError("density must be finite, nonnegative and match the grid")
        # a tiny floor keeps the CDF strictly increasing
        f = np.maximum(f, 1e-14 * f.max())
        steps = np.diff(grid) * (f[1:] + f[:-1]) / 2
        total = steps.sum()
        self.grid = grid
        self.density = f / total
        self.cumulative = np.concatenate([[0.0], np.cumsum(steps / total)])
        self.cumulative[-1] = 1.0

    @property
    def support(self):
        return self.grid[0], self.grid[-1]

    def pdf(self, x):
        return np.interp(x, self.grid, self.density, left=0.0, right=0.0)

    def logpdf(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(x))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        g, f, F = self.grid, self.density, self.cumulative
        i = np.clip(np.searchsorted(g, x, side="right") - 1, 0, g.size - 2)
        dx = g[i + 1] - g[i]
        t = np.clip(x - g[i], 0.0, dx)
        slope = (f[i + 1] - f[i]) / dx
        out = F[i] + f[i] * t + 0.5 * slope * t * t
        return np.clip(np.where(x < g[0], 0.0, np.where(x > g[-1], 1.0, out)), 0.0, 1.0)

    def ppf(self, u):
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        g, f, F = self.grid, self.density, self.cumulative
        i = np.clip(np.searchsorted(F, u, side="right") - 1, 0, g.size - 2)
        dx = g[i + 1] - g[i]
        a = 0.5 * (f[i + 1] - f[i]) / dx
        m = np.clip(u - F[i], 0.0, None)
        disc = np.sqrt(np.maximum(f[i] ** 2 + 4 * a * m, 0.0))
        t = 2 * m / (f[i] + disc)
        return g[i] + np.clip(t, 0.0, dx)

    def to_dict(self) -> dict:
        return {"kind": "grid", "grid": self.grid.tolist(), "density": self.density.tolist()}


class ParametricMargin:
    """Margin backed by a frozen :mod:`scipy.stats` distribution."""

    def __init__(self, dist):
        self.dist = dist

    @classmethod
    def normal(cls, loc=0.0, scale=1.0) -> "ParametricMargin":
        return cls(stats.norm(loc=loc, scale=scale))

    @property
    def support(self):
        return self.dist.support()

    def pdf(self, x):
        return self.dist.pdf(x)

    def logpdf(self, x):
        return self.dist.logpdf(x)

    def cdf(self, x):
        return self.dist.cdf(x)

    def ppf(self, u):
        return self.dist.ppf(u)

    def to_dict(self) -> dict:
        return {"kind": "scipy", "name": self.dist.dist.name, "args": list(self.dist.args),
                "kwds": dict(self.dist.kwds)}


def margin_from_dict(d: dict):
    if d["kind"] == "grid":
        return GridMargin(d["grid"], d["density"])
    if d["kind"] == "scipy":
        return ParametricMargin(getattr(stats, d["name"])(*d["args"], **d["kwds"]))
    raise ValueError(f"unknown margin kind {d['kind']!r}")


@dataclass(frozen=True)
class CorrelationMatrix:
    """Symmetric, unit-diagonal matrix with smallest eigenvalue >= 1e-8."""

    matrix: np.ndarray

    def __post_init__(self):
        C = np.array(self.matrix, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ValueError("correlation matrix must be square")
        if not _is_valid_correlation(C):
            raise ValueError("matrix is not a valid correlation matrix "
                             "(symmetric, unit diagonal, min eigenvalue >= 1e-8)")
        C.setflags(write=False)
        object.__setattr__(self, "matrix", C)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def cholesky(self) -> np.ndarray:
        return np.linalg.cholesky(self.matrix)

    def submatrix(self, idx) -> "CorrelationMatrix":
        idx = np.asarray(idx)
        return CorrelationMatrix(self.matrix[np.ix_(idx, idx)])


def _is_valid_correlation(C) -> bool:
    return (np.array_equal(C, C.T) and np.all(np.diag(C) == 1.0)
            and np.all(np.isfinite(C)) and np.linalg.eigvalsh(C)[0] >= MIN_EIGENVALUE)


def _weighted_quantile(x, w, q):
    order = np.argsort(x, kind="stable")
    cw = np.cumsum(w[order])
    cw = (cw - 0.5 * w[order]) / cw[-1]
    return np.interp(q, cw, x[order])


def silverman_bandwidth(x, weights=None) -> float:
    """Silverman's rule ``0.9 min(sd, IQR/1.34) n^(-1/5)`` (effective n when weighted)."""
    x = np.asarray(x, dtype=float)
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    n_eff = 1.0 / np.sum(w * w)
    mean = w @ x
    sd = np.sqrt(w @ (x - mean) ** 2 * n_eff / max(n_eff - 1, 1))
    q25, q75 = _weighted_quantile(x, w, [0.25, 0.75])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * n_eff ** -0.2


def fit_margin_kde(samples, weights=None, bandwidth: Optional[float] = None,
                   grid_size: int = 512) -> GridMargin:
    """Gaussian-kernel density estimate on ``grid_size`` points over ``[min - 4b, max + 4b]``."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 10:
        raise ValueError(f"need at least 10 samples for a margin estimate, got {x.size}")
    if not np.ptp(x) > 0:
        raise ValueError("samples have zero spread")
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float).ravel()
    b = silverman_bandwidth(x, w) if bandwidth is None else float(bandwidth)
    if not b > 0:
        raise ValueError("KDE bandwidth must be positive")
    grid = np.linspace(x.min() - 4 * b, x.max() + 4 * b, grid_size)
    dens = np.zeros(grid_size)
    for start in range(0, x.size, 4096):
        u = (grid[:, None] - x[None, start:start + 4096]) / b
        dens += np.exp(-0.5 * u * u) @ w[start:start + 4096]
    return GridMargin(grid, dens)


def _score_table(r: int) -> np.ndarray:
    """Normal scores ``Phi^-1(k / (r + 1))`` for k = 1..r, exactly antisymmetric."""
    k = np.arange(1, r + 1)
    scores = ndtri(k / (r + 1))
    half = r // 2
    scores[r - half:] = -scores[:half][::-1]
    if r % 2:
        scores[half] = 0.0
    return scores


def normal_scores(x) -> np.ndarray:
    """Map each value to ``Phi^-1(rank / (r + 1))`` with positional tie-breaking."""
    from .adjust import column_ranks

    x = np.asarray(x)
    return _score_table(x.shape[0])[column_ranks(x) - 1]


def normal_scores_correlation(pair_samples) -> float:
    """Pearson correlation of the normal scores of the two columns."""
    X = np.asarray(pair_samples, dtype=float)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError("expected an (r, 2) array")
    if X.shape[0] < 3:
        raise ValueError("need at least 3 pairs")
    if np.ptp(X[:, 0]) == 0 or np.ptp(X[:, 1]) == 0:
        raise ValueError("a column is constant; normal-scores correlation undefined")
    a = normal_scores(X[:, 0])
    b = normal_scores(X[:, 1])
    # score vectors are centred by construction
    aa = a @ a
    return float(np.clip((a @ b) / np.sqrt(aa * (b @ b)), -1.0, 1.0))


def nearest_correlation(raw, min_eigenvalue: float = MIN_EIGENVALUE, max_iter: int = 200) -> CorrelationMatrix:
    """Repair a symmetric unit-diagonal matrix by eigenvalue clipping and rescaling.

    Matrices that already satisfy the correlation invariant are returned unchanged.
    """
    A = np.array(raw, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(A, A.T, atol=1e-12):
        raise ValueError("matrix must be symmetric")
    A = (A + A.T) / 2
    np.fill_diagonal(A, 1.0)
    if _is_valid_correlation(A):
        return CorrelationMatrix(A)
    floor = min_eigenvalue
    for _ in range(max_iter):
        vals, vecs = np.linalg.eigh(A)
        B = (vecs * np.maximum(vals, floor)) @ vecs.T
        d = 1.0 / np.sqrt(np.diag(B))
        B = B * d[:, None] * d[None, :]
        B = (B + B.T) / 2
        np.fill_diagonal(B, 1.0)
        if _is_valid_correlation(B):
            return CorrelationMatrix(B)
        A = B
        floor *= 2
    raise RuntimeError("correlation repair did not converge")


class MetaGaussian:
    """Gaussian copula with arbitrary univariate margins."""

    def __init__(self, margins: Sequence, correlation: CorrelationMatrix):
        if not isinstance(correlation, CorrelationMatrix):
            correlation = CorrelationMatrix(correlation)
        if len(margins) != correlation.dim:
            raise ValueError(f"{len(margins)} margins for a {correlation.dim}-d correlation")
        self.margins = list(margins)
        self.correlation = correlation
        self._chol = correlation.cholesky()

    @property
    def p(self) -> int:
        return len(self.margins)

    def marginal(self, idx) -> "MetaGaussian":
        idx = list(idx)
        return MetaGaussian([self.margins[i] for i in idx], self.correlation.submatrix(idx))

    def logpdf(self, gamma) -> np.ndarray:
        return meta_gaussian_logdensity(self, gamma)

    def sample(self, n: int, random_state=None) -> np.ndarray:
        rng = as_generator(random_state)
        eta = rng.standard_normal((n, self.p)) @ self._chol.T
        u = ndtr(eta)
        return np.column_stack([m.ppf(u[:, j]) for j, m in enumerate(self.margins)])

    def to_dict(self) -> dict:
        return {"margins": [m.to_dict() for m in self.margins],
                "correlation": self.correlation.matrix.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MetaGaussian":
        return cls([margin_from_dict(m) for m in d["margins"]], CorrelationMatrix(np.array(d["correlation"])))


def meta_gaussian_logdensity(mg: MetaGaussian, gamma) -> np.ndarray:
    """``log h(gamma) = -0.5 log|C| + 0.5 z'(I - C^-1) z + sum_j log f_j(gamma_j)``
    with ``z_j = Phi^-1(F_j(gamma_j))``; ``-inf`` outside a margin's support.

    Accepts one point (shape (p,)) or a batch (shape (n, p)).
    """
    g = np.asarray(gamma, dtype=float)
    single = g.ndim == 1
    g = np.atleast_2d(g)
    if g.shape[1] != mg.p:
        raise ValueError(f"expected points of dimension {mg.p}")
    logf = np.zeros(g.shape[0])
    z = np.empty_like(g)
    inside = np.ones(g.shape[0], dtype=bool)
    for j, m in enumerate(mg.margins):
        lo, hi = m.support
        inside &= (g[:, j] >= lo) & (g[:, j] <= hi)
        with np.errstate(divide="ignore"):
            logf += m.logpdf(g[:, j])
        z[:, j] = ndtri(np.clip(m.cdf(g[:, j]), PROB_CLAMP, 1 - PROB_CLAMP))
    L = mg._chol
    w = np.linalg.solve(L, z.T).T
    logdet = 2 * np.sum(np.log(np.diag(L)))
    out = -0.5 * logdet + 0.5 * (np.einsum("ij,ij->i", z, z) - np.einsum("ij,ij->i", w, w)) + logf
    out = np.where(inside, out, -np.inf)
    return out[0] if single else out


def sample_meta_gaussian(mg: MetaGaussian, n: int, rng) -> ParticleSet:
    """Draw ``n`` parameter vectors; the returned set carries no summaries."""
    if n < 1:
        raise ValueError("n must be >= 1")
    theta = mg.sample(n, rng)
    meta = {"source": "meta-gaussian"}
    if isinstance(rng, RngStream):
        meta.update(seed=rng.seed, stream=list(rng.key))
    return ParticleSet(theta, np.zeros((n, 0)), None, meta)


class GaussianCopulaABC(BaseEstimator):
    """Meta-Gaussian posterior approximation assembled from low-dimensional ABC runs.

    For each parameter a univariate rejection run (on its own summaries,
    optionally regression adjusted) gives a kernel density margin; for each
    pair a bivariate run gives a normal-scores correlation. All runs share one
    reference table.

    Parameters
    ----------
    marginal_selections : dict, optional
        ``{j: summary indices}``; every summary when omitted.
    pair_selections : dict, optional
        ``{(i, j): summary indices}``; union of the marginal selections when omitted.
    kernel, quantile, bandwidth, scale
        Rejection settings, see :class:`~hdabc.rejection.RejectionABC`.
    regression : bool, default=True
        Regression-adjust every univariate and bivariate run.
    kde_bandwidth : float, optional
        Fixed KDE bandwidth for the margins; Silverman's rule when omitted.
    grid_size : int, default=512

    Attributes
    ----------
    margins_ : list of GridMargin
    raw_correlation_ : ndarray
        Pairwise estimates before positive-definite repair.
    correlation_ : CorrelationMatrix
    posterior_ : MetaGaussian
    marginal_samples_ : list of ndarray
    """

    def __init__(self, marginal_selections=None, pair_selections=None, kernel="uniform", quantile=0.01,
                 bandwidth=None, scale="sd", regression=True, kde_bandwidth=None, grid_size=512):
        self.marginal_selections = marginal_selections
        self.pair_selections = pair_selections
        self.kernel = kernel
        self.quantile = quantile
        self.bandwidth = bandwidth
        self.scale = scale
        self.regression = regression
        self.kde_bandwidth = kde_bandwidth
        self.grid_size = grid_size

    def _run(self, pool: ParticleSet, s_obs, selection, columns) -> ParticleSet:
        kernel = KernelConfig(self.kernel, self.bandwidth, self.quantile)
        acc = rejection_abc(pool, s_obs, selection, kernel, self.distance_)
        acc = acc.replace(theta=acc.theta[:, columns])
        if self.regression:
            adj = fit_regression_adjustment(acc, selection)
            acc = acc.replace(theta=adj.apply(acc.theta, acc.summaries, s_obs))
        return acc

    def fit(self, particles: ParticleSet, s_obs):
        s_obs = np.asarray(s_obs, dtype=float)
        p, q = particles.p, particles.q
        marg = self.marginal_selections or {j: list(range(q)) for j in range(p)}
        marg = {int(j): check_selection(v, q).tolist() for j, v in marg.items()}
        if sorted(marg) != list(range(p)):
            raise ValueError("marginal selections must cover every parameter")
        pairs = self.pair_selections
        if pairs is None:
            pairs = {(i, j): sorted(set(marg[i]) | set(marg[j])) for i in range(p) for j in range(i + 1, p)}
        pairs = {tuple(sorted(map(int, k))): check_selection(v, q).tolist() for k, v in pairs.items()}
        missing = [(i, j) for i in range(p) for j in range(i + 1, p) if (i, j) not in pairs]
        if missing:
            raise ValueError(f"pair selections missing for {missing[:5]}")

        self.distance_ = make_distance(particles, self.scale)
        self.margins_, self.marginal_samples_ = [], []
        for j in range(p):
            run = self._run(particles, s_obs, marg[j], [j])
            self.marginal_samples_.append(run.theta[:, 0])
            self.margins_.append(fit_margin_kde(run.theta[:, 0], run.weights, self.kde_bandwidth,
                                                self.grid_size))
        C = np.eye(p)
        for (i, j), sel in sorted(pairs.items()):
            run = self._run(particles, s_obs, sel, [i, j])
            C[i, j] = C[j, i] = normal_scores_correlation(run.theta)
        self.raw_correlation_ = C
        self.correlation_ = nearest_correlation(C)
        self.posterior_ = MetaGaussian(self.margins_, self.correlation_)
        return self

    def sample(self, n: int, random_state=None) -> np.ndarray:
        check_is_fitted(self, "posterior_")
        return self.posterior_.sample(n, random_state)

    def score_samples(self, theta) -> np.ndarray:
        check_is_fitted(self, "posterior_")
        return self.posterior_.logpdf(np.atleast_2d(theta))


def copula_abc(model: SimulatorModel, s_obs, n: int, rng: RngStream, marginal_selections=None,
               pair_selections=None, **config) -> MetaGaussian:
    """Simulate a shared reference table from the prior and fit :class:`GaussianCopulaABC`.

    Selections default to the model's own marginal and pairwise selections.
    """
    pool = generate_particles(model, n, rng)
    if marginal_selections is None:
        marginal_selections = model.marginal_selections()
    if pair_selections is None:
        pair_selections = model.pair_selections()
    est = GaussianCopulaABC(marginal_selections, pair_selections, **config).fit(pool, s_obs)
    return est.posterior_
