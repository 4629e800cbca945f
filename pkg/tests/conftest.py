import numpy as np
import pytest

from trajlab.predictor import GaussianOracle, GaussianOracleConfig
from trajlab.schedule import build_noise_schedule


@pytest.fixture(scope="session")
def default_schedule():
    return build_noise_schedule()


@pytest.fixture(scope="session")
def soft_schedule():
    # Gentle coefficient dynamics used by round-trip and alignment studies.
    return build_noise_schedule(1000, 0.0002, 0.004)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def make_oracle(schedule, d=8, mu_scale=1.0, sigma=1.0, coupling=None, seed=0):
    rng = np.random.default_rng(seed)
    mu = mu_scale * rng.normal(size=d)
    sigma_diag = np.full(d, float(sigma))
    cfg = GaussianOracleConfig(mu=mu, sigma_diag=sigma_diag, coupling=coupling)
    return GaussianOracle(schedule, cfg)


@pytest.fixture()
def unit_oracle(default_schedule):
    """d=8 oracle with unit covariance and no embedding coupling."""
    return make_oracle(default_schedule, d=8, sigma=1.0)
