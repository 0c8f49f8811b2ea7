"""Regression density estimation of the summary likelihood."""

from .likelihood import RegressionDensityEstimator, likelihood_approx, load_rde
from .marginals import (MarginalConditionalModel, fit_marginal_conditional, fit_marginal_conditionals,
                        transform_to_scores)
from .mcmc import MCMCResult, mcmc_sample, metropolis_log_ratio
from .mixture import (ConditionalGMM, DegenerateMixtureError, GaussianMixture, condition_mixture,
                      fit_gaussian_mixture, fit_joint_mixture)
from .pilot import PilotProposal, build_pilot

__all__ = [
    "RegressionDensityEstimator", "likelihood_approx", "load_rde",
    "MarginalConditionalModel", "fit_marginal_conditional", "fit_marginal_conditionals", "transform_to_scores",
    "MCMCResult", "mcmc_sample", "metropolis_log_ratio",
    "ConditionalGMM", "DegenerateMixtureError", "GaussianMixture", "condition_mixture",
    "fit_gaussian_mixture", "fit_joint_mixture",
    "PilotProposal", "build_pilot",
]
