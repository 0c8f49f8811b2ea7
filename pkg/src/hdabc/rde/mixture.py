"""Gaussian mixtures fitted by EM, and their conditionals given a parameter block."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import logsumexp
from sklearn.cluster import KMeans

from ..core import as_generator

__all__ = [
    "GaussianMixture",
    "ConditionalGMM",
    "DegenerateMixtureError",
    "fit_gaussian_mixture",
    "fit_joint_mixture",
    "condition_mixture",
    "REG_COVAR",
]

REG_COVAR = 1e-10
_LOG_2PI = np.log(2 * np.pi)


class DegenerateMixtureError(RuntimeError):
    """Every EM restart collapsed."""


def _mvn_logpdf(X, mean, cov) -> np.ndarray:
    L = np.linalg.cholesky(cov)
    Linv = solve_triangular(L, np.eye(L.shape[0]), lower=True)
    sol = (X - mean) @ Linv.T
    return -0.5 * (np.einsum("ij,ij->i", sol, sol) + X.shape[1] * _LOG_2PI) - np.sum(np.log(np.diag(L)))


def _logsumexp_rows(a) -> np.ndarray:
    m = a.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.log(np.exp(a - m).sum(axis=1)) + m[:, 0]


@dataclass(frozen=True)
class GaussianMixture:
    """``sum_k w_k N(mu_k, Psi_k)``.

    Attributes
    ----------
    weights : array of shape (K,)
    means : array of shape (K, d)
    covariances : array of shape (K, d, d)
    loglik_trace : tuple of float
        Observed-data log-likelihood after every EM iteration of the selected fit.
    bic : float
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    loglik_trace: tuple = ()
    bic: float = np.nan

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        cov = np.asarray(self.covariances, dtype=float).reshape(mu.shape[0], mu.shape[1], mu.shape[1])
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise ValueError("mixture weights must be nonnegative and sum to one")
        for c in cov:
            np.linalg.cholesky(c)
        object.__setattr__(self, "weights", w / w.sum())
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_logpdf(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.column_stack([np.log(w) + _mvn_logpdf(X, m, c) if w > 0 else np.full(X.shape[0], -np.inf)
                                for w, m, c in zip(self.weights, self.means, self.covariances)])

    def logpdf(self, X) -> np.ndarray:
        return _logsumexp_rows(self.component_logpdf(X))

    def responsibilities(self, X) -> np.ndarray:
        lp = self.component_logpdf(X)
        return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))

    def n_parameters(self) -> int:
        k, d = self.n_components, self.dim
        return k - 1 + k * d + k * d * (d + 1) // 2

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "bic": float(self.bic),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianMixture":
        return cls(np.asarray(d["weights"]), np.asarray(d["means"]), np.asarray(d["covariances"]),
                   bic=d.get("bic", np.nan))


def _m_step(X, resp, reg):
    nk = resp.sum(axis=0)
    if np.any(nk < X.shape[1] + 1e-8):
        return None
    w = nk / nk.sum()
    means = (resp.T @ X) / nk[:, None]
    covs = np.empty((nk.size, X.shape[1], X.shape[1]))
    for k in range(nk.size):
        D = X - means[k]
        covs[k] = (D * resp[:, k:k + 1]).T @ D / nk[k] + reg * np.eye(X.shape[1])
        covs[k] = 0.5 * (covs[k] + covs[k].T)
        if np.linalg.eigvalsh(covs[k])[0] < reg:
            return None
    return w, means, covs


def _em_run(X, params, reg, max_iter, tol, trace):
    """Iterate EM from ``params``; returns (mixture, trace, converged) or None if degenerate."""
    n = X.shape[0]
    trace = list(trace)
    for _ in range(max_iter):
        try:
            gm = GaussianMixture(*params)
        except np.linalg.LinAlgError:
            return None
        lp = gm.component_logpdf(X)
        ll_rows = _logsumexp_rows(lp)
        trace.append(float(ll_rows.sum()))
        if len(trace) > 1:
            if trace[-1] < trace[-2] - 1e-9 * abs(trace[-2]):
                raise AssertionError(f"EM log-likelihood decreased: {trace[-2]!r} -> {trace[-1]!r}")
            if (trace[-1] - trace[-2]) / n < tol:
                return gm, trace, True
        new = _m_step(X, np.exp(lp - ll_rows[:, None]), reg)
        if new is None:
            return None
        params = new
    return GaussianMixture(*params), trace, False


def _init_params(X, labels, K, reg):
    resp = np.zeros((X.shape[0], K))
    resp[np.arange(X.shape[0]), labels] = 1.0
    return _m_step(X, resp, reg)


def fit_gaussian_mixture(X, n_components: int, random_state=None, n_init: int = 10, reg_covar: float = REG_COVAR,
                         max_iter: int = 300, tol: float = 1e-6, short_iter: int = 20) -> GaussianMixture:
    """EM from ``n_init`` k-means initialisations; the highest likelihood fit wins.

    Every restart runs ``short_iter`` EM iterations and only the best one is
    iterated to convergence. ``reg_covar * I`` is added to every covariance at
    each M-step. The observed-data log-likelihood is checked for monotonicity
    at every iteration; ``tol`` bounds the per-observation improvement at
    convergence.
    """
    X = np.asarray(X, dtype=float)
    rng = as_generator(random_state)
    seeds = rng.integers(0, 2**31 - 1, n_init)
    best = None
    for seed in seeds[: 1 if n_components == 1 else n_init]:
        if n_components == 1:
            labels = np.zeros(X.shape[0], dtype=int)
        else:
            labels = KMeans(n_components, n_init=1, random_state=int(seed)).fit(X).labels_
        params = _init_params(X, labels, n_components, reg_covar)
        run = None if params is None else _em_run(X, params, reg_covar, short_iter, tol, [])
        if run is not None and (best is None or run[1][-1] > best[1][-1]):
            best = run
    if best is None:
        raise DegenerateMixtureError(f"all {n_init} EM restarts with K={n_components} were degenerate")
    gm, trace, converged = best
    if not converged:
        # gm holds the M-step that follows the last scored state
        run = _em_run(X, (gm.weights, gm.means, gm.covariances), reg_covar, max_iter, tol, trace)
        if run is None:
            raise DegenerateMixtureError(f"EM with K={n_components} collapsed after its restarts")
        gm, trace, _ = run
    bic = -2 * trace[-1] + gm.n_parameters() * np.log(X.shape[0])
    return GaussianMixture(gm.weights, gm.means, gm.covariances, tuple(trace), bic)


def fit_joint_mixture(U, theta, k_max: int = 5, random_state=None, n_init: int = 10, **kwargs) -> GaussianMixture:
    """Mixture on rows ``(U, theta)`` with the number of components chosen by BIC over ``1..k_max``."""
    X = np.column_stack([np.atleast_2d(U), np.atleast_2d(theta)])
    if X.shape[0] <= 10 * X.shape[1]:
        raise ValueError(f"need more than {10 * X.shape[1]} rows to fit a joint mixture in {X.shape[1]} dimensions")
    rng = as_generator(random_state)
    best = None
    for K in range(1, k_max + 1):
        try:
            gm = fit_gaussian_mixture(X, K, rng, n_init=n_init, **kwargs)
        except DegenerateMixtureError:
            if K == 1:
                raise
            continue
        if best is None or gm.bic < best.bic:
            best = gm
    return best


@dataclass(frozen=True)
class ConditionalGMM:
    """Mixture over the leading block given the trailing block: weights, means and covariances."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def logpdf(self, U) -> np.ndarray:
        U = np.atleast_2d(U)
        lp = [np.log(w) + _mvn_logpdf(U, m, c) for w, m, c in zip(self.weights, self.means, self.covariances) if w > 0]
        return logsumexp(np.column_stack(lp), axis=1)


@dataclass(frozen=True)
class _Blocks:
    log_w: np.ndarray
    mu_u: np.ndarray
    mu_t: np.ndarray
    reg: np.ndarray
    chol_tt: list
    logdet_tt: np.ndarray
    cov_c: np.ndarray
    chol_c: np.ndarray
    logdet_c: np.ndarray


def _blocks(gmm: GaussianMixture, q: int) -> _Blocks:
    K = gmm.n_components
    regs, chols, ldt, covc, cholc, ldc = [], [], [], [], [], []
    for S in gmm.covariances:
        Suu, Sut, Stt = S[:q, :q], S[:q, q:], S[q:, q:]
        cf = cho_factor(Stt, lower=True)
        B = cho_solve(cf, Sut.T).T
        C = Suu - B @ Sut.T
        C = 0.5 * (C + C.T)
        Lc = np.linalg.cholesky(C)
        regs.append(B)
        chols.append(cf)
        ldt.append(2 * np.sum(np.log(np.diag(cf[0]))))
        covc.append(C)
        cholc.append(Lc)
        ldc.append(2 * np.sum(np.log(np.diag(Lc))))
    with np.errstate(divide="ignore"):
        log_w = np.log(gmm.weights)
    return _Blocks(log_w, gmm.means[:, :q], gmm.means[:, q:], np.array(regs), chols, np.array(ldt),
                   np.array(covc), np.array(cholc), np.array(ldc))


def _conditional_weights(b: _Blocks, theta) -> np.ndarray:
    """Log conditional weights, shape (n, K)."""
    K = b.log_w.size
    out = np.empty((theta.shape[0], K))
    p = theta.shape[1]
    for k in range(K):
        D = theta - b.mu_t[k]
        maha = np.sum(D * cho_solve(b.chol_tt[k], D.T).T, axis=1)
        out[:, k] = b.log_w[k] - 0.5 * (maha + b.logdet_tt[k] + p * _LOG_2PI)
    return out - logsumexp(out, axis=1, keepdims=True)


def condition_mixture(gmm: GaussianMixture, theta, q: int = None) -> ConditionalGMM:
    """Mixture for the first ``q`` coordinates given the remaining ones equal ``theta``.

    Component weights are reweighted by each component's ``theta`` marginal in
    log space; means and covariances are the Gaussian conditional moments.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    q = gmm.dim - theta.size if q is None else q
    b = _blocks(gmm, q)
    lw = _conditional_weights(b, theta[None, :])[0]
    w = np.exp(lw)
    means = b.mu_u + np.einsum("kqp,kp->kq", b.reg, theta - b.mu_t)
    return ConditionalGMM(w / w.sum(), means, b.cov_c)


class ConditionalDensity:
    """Vectorised ``log g(U | theta)`` for a fixed mixture; caches the block algebra."""

    def __init__(self, gmm: GaussianMixture, q: int):
        self.gmm = gmm
        self.q = q
        self._b = _blocks(gmm, q)

    def logpdf(self, U, theta) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=float))
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        b = self._b
        lw = _conditional_weights(b, theta)
        out = np.empty_like(lw)
        for k in range(lw.shape[1]):
            mu = b.mu_u[k] + (theta - b.mu_t[k]) @ b.reg[k].T
            sol = solve_triangular(b.chol_c[k], (U - mu).T, lower=True)
            out[:, k] = lw[:, k] - 0.5 * (np.sum(sol * sol, axis=0) + b.logdet_c[k] + self.q * _LOG_2PI)
        return logsumexp(out, axis=1)
