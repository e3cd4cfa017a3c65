import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("pkg", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pkg")

# small lattices routinely have kernels wider than the ring
warnings.filterwarnings("ignore", message="kernel support")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spins(rng, n, m=None):
    if m is None:
        return np.where(rng.random(n) < 0.5, 1, -1).astype(np.int8)
    s = -np.ones(n, dtype=np.int8)
    s[rng.choice(n, (n + m) // 2, replace=False)] = 1
    return s
