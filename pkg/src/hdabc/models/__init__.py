"""Test models, registered by string id."""

from __future__ import annotations

import inspect

from ..core import SimulatorModel
from .gk import GkModel, GkParams, MultiGkModel, gk_quantile, sample_wishart_correlation, simulate_multi_gk
from .quantreg import DEFAULT_LEVELS, N_DATA_QUANTILES, QuantileCurveParams, QuantileRegressionModel, qr_summaries, simulate_quantile_regression
from .twisted import TwistedNormal, TwistedNormalParams, twisted_prior_logdensity, twisted_true_bivariate_margin

__all__ = [
    "MODELS", "make_model", "model_dimensions",
    "GkModel", "GkParams", "MultiGkModel", "gk_quantile", "sample_wishart_correlation", "simulate_multi_gk",
    "QuantileCurveParams", "QuantileRegressionModel", "qr_summaries", "simulate_quantile_regression",
    "TwistedNormal", "TwistedNormalParams", "twisted_prior_logdensity", "twisted_true_bivariate_margin",
]

MODELS = {
    "twisted": TwistedNormal,
    "gk": GkModel,
    "multigk": MultiGkModel,
    "qr": QuantileRegressionModel,
}


def make_model(model_id: str, params: dict | None = None) -> SimulatorModel:
    """Instantiate a registered model from keyword parameters."""
    try:
        cls = MODELS[model_id]
    except KeyError:
        raise ValueError(f"unknown model {model_id!r}; expected one of {sorted(MODELS)}") from None
    return cls(**(params or {}))


def model_dimensions(model_id: str, params: dict | None = None) -> tuple[int, int]:
    """``(p, q)`` implied by the parameters, without building the model.

    Raises
    ------
    TypeError
        For parameters the model does not accept.
    ValueError
        For an unknown model or parameters that fix an invalid dimension.
    """
    params = params or {}
    if model_id not in MODELS:
        raise ValueError(f"unknown model {model_id!r}; expected one of {sorted(MODELS)}")
    inspect.signature(MODELS[model_id]).bind(**params)
    if model_id == "twisted":
        TwistedNormalParams(**params)
        p = int(params.get("p", 5))
        return p, p
    if model_id == "gk":
        return 4, 4
    if model_id == "multigk":
        d = int(params.get("dim", 3))
        if d < 2:
            raise ValueError("multivariate g-and-k needs at least two margins")
        k = 4 * d + d * (d - 1) // 2
        return k, k
    if model_id == "qr":
        m = len(params.get("levels", DEFAULT_LEVELS))
        if m < 2:
            raise ValueError("quantile regression needs at least two levels")
        return 3 * m, 5 * m + N_DATA_QUANTILES
    raise ValueError(f"unknown model {model_id!r}; expected one of {sorted(MODELS)}")
