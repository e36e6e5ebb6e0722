import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def gaussian_pair_data(n, rho0, rho1, p=2, pair=(0, 1), seed=0):
    """Standard normal covariates; ``pair`` gets class-specific correlation."""
    from vinelogit.data import Dataset

    g = np.random.default_rng(seed)
    y = g.integers(0, 2, n)
    X = g.standard_normal((n, p))
    a, b = pair
    r = np.where(y == 1, rho1, rho0)
    X[:, b] = r * X[:, a] + np.sqrt(1 - r * r) * g.standard_normal(n)
    return Dataset(X, y, ("continuous",) * p)
