"""Small linear-algebra helpers shared by the regression-based steps."""

from __future__ import annotations

import warnings

import numpy as np

COND_LIMIT = 1e12
RIDGE_SCALE = 1e-8


def weighted_lstsq(X, Y, weights=None):
    """Weighted least squares of ``Y`` on ``(1, X)`` with a ridge fallback.

    Columns of ``X`` with no weighted spread (relative to their magnitude)
    get a zero coefficient. When the
    centred Gram matrix is near singular (condition number above 1e12) a ridge
    penalty ``1e-8 * trace(G) / q`` is added and a warning is emitted.

    Returns
    -------
    coef : array of shape (q, m)
    intercept : array of shape (m,)
    ridge : float
        The penalty actually used (0 when none).
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, q = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    x_mean = w @ X
    y_mean = w @ Y
    Xc = X - x_mean
    Yc = Y - y_mean
    coef = np.zeros((q, Y.shape[1]))
    spread = w @ (Xc * Xc)
    # rounding in the mean leaves ~eps-sized spread on constant columns
    magnitude = np.max(np.abs(X), axis=0) if n else np.zeros(q)
    active = np.sqrt(spread) > 1e-12 * magnitude
    ridge = 0.0
    if active.any():
        Xa = Xc[:, active]
        G = (Xa * w[:, None]).T @ Xa
        rhs = (Xa * w[:, None]).T @ Yc
        if np.linalg.cond(G) > COND_LIMIT:
            ridge = RIDGE_SCALE * np.trace(G) / G.shape[0]
            warnings.warn(f"near-singular regression design; ridge penalty {ridge:.3g} applied",
                          RuntimeWarning, stacklevel=3)
            G = G + ridge * np.eye(G.shape[0])
        coef[active] = np.linalg.solve(G, rhs)
    intercept = y_mean - x_mean @ coef
    return coef, intercept, ridge
