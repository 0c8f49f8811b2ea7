"""Approximate Bayesian computation for high-dimensional posteriors built from
low-dimensional pieces: rejection sampling, regression and marginal
adjustments, Gaussian copula reconstruction and regression density estimation."""

__version__ = "0.1.0"

from .adjust import LinearRegressionAdjuster, marginal_adjust, regression_adjust  # noqa: E402
from .copula import CorrelationMatrix, GaussianCopulaABC, MetaGaussian, copula_abc  # noqa: E402
from .core import ParticleSet, RngStream, SimulatorError, SimulatorModel, generate_particles  # noqa: E402
from .rejection import KernelConfig, RejectionABC, SemiAutoSummaries, rejection_abc  # noqa: E402

__all__ = [
    "__version__",
    "LinearRegressionAdjuster", "marginal_adjust", "regression_adjust",
    "CorrelationMatrix", "GaussianCopulaABC", "MetaGaussian", "copula_abc",
    "ParticleSet", "RngStream", "SimulatorError", "SimulatorModel", "generate_particles",
    "KernelConfig", "RejectionABC", "SemiAutoSummaries", "rejection_abc",
]
