import numpy as np
import pytest

from hdabc.core import SimulatorError, SimulatorModel


class IdentityModel(SimulatorModel):
    """s = theta exactly, theta ~ N(0, prior_sd^2 I)."""

    name = "identity"

    def __init__(self, p=2, prior_sd=1.0, s_obs=None):
        self.p = self.q = p
        self.prior_sd = prior_sd
        self._s_obs = np.zeros(p) if s_obs is None else np.asarray(s_obs, float)

    @property
    def observed_summaries(self):
        return self._s_obs

    def prior_sample(self, rng, n):
        return self.prior_sd * rng.standard_normal((n, self.p))

    def prior_logdensity(self, theta):
        return -0.5 * np.sum((np.atleast_2d(theta) / self.prior_sd) ** 2, axis=1)

    def simulate(self, theta, rng):
        return np.array(theta, dtype=float, copy=True)


class NormalMeanModel(IdentityModel):
    """s ~ N(theta, I)."""

    name = "normal-mean"

    def simulate(self, theta, rng):
        return theta + rng.standard_normal(theta.shape)


class FlakyModel(IdentityModel):
    """Fails on parameters with a negative first coordinate."""

    name = "flaky"

    def simulate(self, theta, rng):
        bad = np.flatnonzero(theta[:, 0] < 0)
        if bad.size:
            raise SimulatorError("negative first coordinate", bad)
        return theta + rng.standard_normal(theta.shape)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
