"""Adaptive random-walk Metropolis for posteriors with an approximate likelihood."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..core import as_generator

__all__ = ["MCMCResult", "mcmc_sample", "metropolis_log_ratio"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MCMCResult:
    chain: np.ndarray
    log_posterior: np.ndarray
    acceptance_rate: float
    burn_in_acceptance_rate: float
    step_cov: np.ndarray


def metropolis_log_ratio(log_post_current: float, log_post_proposed: float) -> float:
    """Log acceptance ratio for a symmetric proposal (before capping at zero)."""
    return log_post_proposed - log_post_current


def mcmc_sample(loglik: Callable, log_prior: Callable, init, n: int, rng=None, burn_in: Optional[int] = None,
                step_cov=None, adapt_every: int = 100) -> MCMCResult:
    """Random-walk Metropolis with Haario-style adaptation during burn-in.

    During burn-in the Gaussian step covariance is reset every ``adapt_every``
    iterations to ``2.38^2 / p`` times the chain's empirical covariance; it is
    frozen afterwards. ``n`` post-burn-in states are returned.

    Raises
    ------
    ValueError
        If the log posterior at ``init`` is not finite.
    RuntimeError
        If no proposal is accepted during burn-in.
    """
    rng = as_generator(rng)
    x = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    p = x.size
    burn_in = max(n // 10, 1000) if burn_in is None else burn_in
    cov = np.eye(p) * 0.1 if step_cov is None else np.atleast_2d(np.asarray(step_cov, dtype=float))
    L = np.linalg.cholesky(cov)

    def logpost(t):
        lp = float(np.asarray(log_prior(t)).ravel()[0])
        if not np.isfinite(lp):
            return -np.inf
        return lp + float(np.asarray(loglik(t)).ravel()[0])

    lp = logpost(x)
    if not np.isfinite(lp):
        raise ValueError("log posterior is not finite at the initial value")
    total = burn_in + n
    chain = np.empty((total, p))
    lps = np.empty(total)
    accepted = np.zeros(total, dtype=bool)
    scale = 2.38 ** 2 / p
    for i in range(total):
        prop = x + L @ rng.standard_normal(p)
        lp_prop = logpost(prop)
        if np.log(rng.random()) < metropolis_log_ratio(lp, lp_prop):
            x, lp = prop, lp_prop
            accepted[i] = True
        chain[i], lps[i] = x, lp
        if i < burn_in and (i + 1) % adapt_every == 0 and i + 1 >= 2 * p:
            emp = np.atleast_2d(np.cov(chain[: i + 1], rowvar=False))
            cand = scale * emp + 1e-10 * np.eye(p)
            try:
                L = np.linalg.cholesky(cand)
                cov = cand
            except np.linalg.LinAlgError:
                pass
    burn_rate = float(accepted[:burn_in].mean()) if burn_in else 1.0
    if burn_in and not accepted[:burn_in].any():
        raise RuntimeError("no proposals accepted during burn-in")
    rate = float(accepted[burn_in:].mean())
    log.info("MCMC acceptance rate %.3f (burn-in %.3f)", rate, burn_rate)
    return MCMCResult(chain[burn_in:], lps[burn_in:], rate, burn_rate, cov)
