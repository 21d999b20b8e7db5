import numpy as np
import pytest

from maxmin_aircomp.model import ChannelState, FeatureStatistics, PowerBudget, SystemInstance
from maxmin_aircomp.simulator import NetworkConfig, generate_synthetic_statistics, sample_channels


def one_d_instance(noise=1.0, cap=1.0):
    """K=1, M=1, L=2 with h=1, mu=(0, 2), sigma^2=1, no sensing noise.

    Min gain at amplitude b is 4 b^2 / (b^2 + noise), maximal at the cap.
    """
    stats = FeatureStatistics([[0.0], [2.0]], [1.0], [[0.0]])
    return SystemInstance(stats, ChannelState([1.0], noise), PowerBudget([cap], [cap]))


def default_instance(seed=0, K=3, M=12, L=4, power_dbm=12.0):
    stats = generate_synthetic_statistics(L, M, K, 0.5, 0.4, rng_seed=seed)
    channel = sample_channels(NetworkConfig(num_devices=K, rng_seed=seed + 1000))
    return SystemInstance(stats, channel, PowerBudget.from_dbm(power_dbm, K, M, 0.6))


def random_instance(seed, max_k=4, max_m=8, max_l=5):
    r = np.random.default_rng(seed)
    K = int(r.integers(1, max_k + 1))
    M = int(r.integers(1, max_m + 1))
    L = int(r.integers(2, max_l + 1))
    stats = generate_synthetic_statistics(L, M, K, float(r.uniform(0.3, 1.5)), float(r.uniform(0, 1)), rng_seed=seed)
    channel = sample_channels(
        NetworkConfig(num_devices=K, rng_seed=seed + 7, channel_noise_variance=float(r.uniform(0.05, 1.0)))
    )
    budget = PowerBudget.from_dbm(float(r.uniform(0, 20)), K, M, float(r.uniform(0.3, 1.2)))
    return SystemInstance(stats, channel, budget)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
