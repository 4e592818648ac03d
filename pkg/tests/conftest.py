import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def loop_gain_loss(rates, g):
    """Plain double loop over (i, j) pairs, one cell; sizes are 1-based."""
    K = len(g)
    gain = [0.0] * K
    loss = [0.0] * K
    for i in range(1, K + 1):
        for j in range(1, K + 1):
            if i + j > K:
                continue
            r = rates[i - 1][j - 1]
            gain[i + j - 1] += 0.5 * r * g[i - 1] * g[j - 1]
            loss[i - 1] += r * g[i - 1] * g[j - 1]
    return np.array(gain), np.array(loss)


def loop_moment(weights, p, g):
    total = 0.0
    for w, x in zip(weights, g):
        total += w**p * x
    return total


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
