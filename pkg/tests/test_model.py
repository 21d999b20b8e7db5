import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maxmin_aircomp.errors import ConfigurationError, IngestionError, InsufficientDataError
from maxmin_aircomp.model import (
    ChannelState,
    FeatureStatistics,
    PowerBudget,
    SystemInstance,
    dbm_to_watt,
    estimate_statistics,
    is_feasible,
    read_feature_samples,
    read_statistics,
    received_moments,
    validate_instance,
    watt_to_dbm,
    write_feature_samples,
    write_statistics,
)

from conftest import default_instance


def _inst(means, var, noise, h, n0, P=1.0, Ptot=None):
    K = len(h)
    M = len(var)
    Ptot = M * P if Ptot is None else Ptot
    return SystemInstance(FeatureStatistics(means, var, noise), ChannelState(h, n0), PowerBudget([P] * K, [Ptot] * K))


def test_zero_precoding_gives_noise_floor():
    inst = _inst([[1.0, 2.0], [0.0, -1.0]], [1.0, 2.0], [[0.3, 0.3]], [0.7], 0.25)
    d = received_moments(inst, np.zeros((1, 2)))
    assert np.all(d.received_means == 0)
    assert np.all(d.received_variances == 0.25)


def test_two_device_hand_example():
    inst = _inst([[1.0], [0.0]], [1.0], [[0.0], [0.0]], [1.0, 0.5], 0.5)
    d = received_moments(inst, np.array([[1.0], [2.0]]))
    assert d.received_means[0, 0] == pytest.approx(2.0)
    assert d.received_variances[0] == pytest.approx(4.5)


def test_single_device_with_sensing_noise():
    inst = _inst([[0.0], [1.0]], [1.0], [[0.4]], [1.0], 0.1)
    assert received_moments(inst, np.ones((1, 1))).received_variances[0] == pytest.approx(1.5)


def test_dimension_mismatch_is_configuration_error():
    inst = default_instance()
    with pytest.raises(ConfigurationError):
        received_moments(inst, np.ones((2, 12)))
    with pytest.raises(ConfigurationError):
        SystemInstance(inst.stats, ChannelState([1.0, 1.0], 0.1), inst.budget)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 5.0))
def test_noise_floor_and_homogeneity(seed, c):
    inst = default_instance(seed % 50)
    r = np.random.default_rng(seed)
    b = r.uniform(-0.1, 0.1, inst.shape)
    d1 = received_moments(inst, b)
    n0 = inst.channel.channel_noise_variance
    assert np.all(d1.received_variances >= n0)
    d2 = received_moments(inst, c * b)
    np.testing.assert_allclose(d2.received_means, c * d1.received_means, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(d2.received_variances - n0, c**2 * (d1.received_variances - n0), rtol=1e-9)


def test_noise_floor_equality_only_at_zero_column():
    inst = default_instance()
    b = np.full(inst.shape, 0.05)
    b[:, 3] = 0.0
    v = received_moments(inst, b).received_variances
    n0 = inst.channel.channel_noise_variance
    assert v[3] == n0
    assert np.all(np.delete(v, 3) > n0)


def test_dbm_conversion():
    assert dbm_to_watt(30.0) == pytest.approx(1.0)
    assert dbm_to_watt(12.0) == pytest.approx(10 ** (-1.8))
    assert watt_to_dbm(dbm_to_watt(-7.5)) == pytest.approx(-7.5)


def test_budget_from_dbm_and_feasibility():
    bu = PowerBudget.from_dbm(12.0, 3, 12, 0.6)
    P = 10 ** (-1.8)
    np.testing.assert_allclose(bu.per_slot, P)
    np.testing.assert_allclose(bu.total, 0.6 * 12 * P)
    b = np.full((3, 12), np.sqrt(0.6 * P))
    assert is_feasible(b, bu)
    assert not is_feasible(b * 1.01, bu)


def test_estimate_statistics_hand_example():
    X = np.array([[0.0], [2.0], [5.0], [5.0]])
    y = np.array([0, 0, 1, 1])
    s = estimate_statistics(X, y, num_devices=2, sensing_noise=0.4)
    assert s.class_means[0, 0] == 1.0
    # pooled: (1 + 1 + 0 + 0) / (4 - 2)
    assert s.feature_variances[0] == pytest.approx(1.0)
    # class 0 alone has unbiased variance 2
    s0 = estimate_statistics(np.array([[0.0], [2.0], [4.0], [6.0]]), np.array([0, 0, 1, 1]), num_devices=1,
                             sensing_noise=0.0)
    assert s0.feature_variances[0] == pytest.approx(2.0)
    np.testing.assert_allclose(s.sensing_noise_variances, 0.4)


def test_estimate_statistics_rejects_bad_input():
    with pytest.raises(InsufficientDataError):
        estimate_statistics(np.ones((4, 2)), np.array([0, 0, 1, 1]), num_devices=1, sensing_noise=0.1)
    with pytest.raises(InsufficientDataError):
        estimate_statistics(np.array([[0.0], [1.0], [2.0]]), np.array([0, 0, 1]), num_devices=1, sensing_noise=0.1)
    with pytest.raises(IngestionError):
        estimate_statistics(np.array([[0.0], [np.nan], [2.0], [3.0]]), np.array([0, 0, 1, 1]), num_devices=1,
                            sensing_noise=0.1)


def test_noiseless_devices_estimate_zero():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 3))
    y = np.repeat([0, 1], 20)
    D = np.repeat(X[:, None, :], 4, axis=1)  # every device reports the same vector
    s = estimate_statistics(X, y, device_samples=D)
    np.testing.assert_allclose(s.sensing_noise_variances, 0.0, atol=1e-15)


def test_estimate_statistics_recovers_model():
    """10^5 samples drawn from the model: estimates within 3 standard errors."""
    rng = np.random.default_rng(42)
    L, M, K, n = 3, 4, 4, 100_000
    mu = rng.normal(0, 1, (L, M))
    sig2 = rng.uniform(0.5, 2.0, M)
    dl2 = rng.uniform(0.1, 1.0, (K, M))
    y = rng.integers(0, L, n)
    X = mu[y] + rng.normal(size=(n, M)) * np.sqrt(sig2)
    D = X[:, None, :] + rng.normal(size=(n, K, M)) * np.sqrt(dl2)
    s = estimate_statistics(X, y, device_samples=D)
    counts = np.bincount(y)
    se_mu = np.sqrt(sig2[None, :] / counts[:, None])
    assert np.all(np.abs(s.class_means - mu) < 3 * se_mu)
    se_var = sig2 * np.sqrt(2.0 / (n - L))
    assert np.all(np.abs(s.feature_variances - sig2) < 3 * se_var)
    # delta-method-free bound: the estimator is a linear combination of K
    # sample variances, each with relative SE sqrt(2/n)
    se_d = np.sqrt(2.0 / n) * (dl2 + dl2.sum(axis=0) / K) * 2
    assert np.all(np.abs(s.sensing_noise_variances - dl2) < 3 * se_d)


def test_validate_instance_reports():
    inst = default_instance()
    assert validate_instance(inst) == []
    means = np.array(inst.stats.class_means)
    means[2] = means[0]
    bad = SystemInstance(FeatureStatistics(means, inst.stats.feature_variances, inst.stats.sensing_noise_variances),
                         inst.channel, inst.budget)
    issues = validate_instance(bad)
    assert [(i.kind, i.pair) for i in issues] == [("degenerate_pair", (0, 2))]
    var = np.array(inst.stats.feature_variances)
    var[5] = 0.0
    bad = SystemInstance(FeatureStatistics(inst.stats.class_means, var, inst.stats.sensing_noise_variances),
                         inst.channel, inst.budget)
    assert any(i.kind == "invariant" and "element 5" in i.message for i in validate_instance(bad))


def test_arrays_are_read_only():
    inst = default_instance()
    with pytest.raises(ValueError):
        inst.stats.class_means[0, 0] = 1.0


def test_statistics_csv_round_trip_is_bit_exact(tmp_path):
    r = np.random.default_rng(3)
    s = FeatureStatistics(r.normal(size=(4, 5)) / 3.0, r.uniform(0.1, 2, 5), r.uniform(0, 1, (3, 5)) / 7.0)
    write_statistics(tmp_path, s)
    t = read_statistics(tmp_path)
    assert np.array_equal(s.class_means, t.class_means)
    assert np.array_equal(s.feature_variances, t.feature_variances)
    assert np.array_equal(s.sensing_noise_variances, t.sensing_noise_variances)
    assert (tmp_path / "means.csv").read_text().splitlines()[0] == "class,f1,f2,f3,f4,f5"


def test_feature_sample_ingestion(tmp_path):
    X = np.array([[0.1, 0.2], [1 / 3, -2.0]])
    y = np.array([0, 1])
    write_feature_samples(tmp_path / "x.csv", X, y)
    X2, y2 = read_feature_samples(tmp_path / "x.csv")
    assert np.array_equal(X, X2) and np.array_equal(y, y2)
    (tmp_path / "bad.csv").write_text("label,f1\n0,nan\n")
    with pytest.raises(IngestionError):
        read_feature_samples(tmp_path / "bad.csv")
    (tmp_path / "hdr.csv").write_text("class,f1\n0,1\n")
    with pytest.raises(IngestionError):
        read_feature_samples(tmp_path / "hdr.csv")
