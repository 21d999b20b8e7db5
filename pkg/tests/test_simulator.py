import numpy as np
import pytest

from maxmin_aircomp.errors import ConfigurationError, DegenerateInstanceError, InsufficientDataError, LearningRateError
from maxmin_aircomp.model import (
    ChannelState,
    FeatureStatistics,
    PowerBudget,
    ReceivedDistribution,
    SystemInstance,
    received_moments,
)
from maxmin_aircomp.optimizer import mmse_allocation, sca_maxmin
from maxmin_aircomp.simulator import (
    AccuracyReport,
    NetworkConfig,
    evaluate_accuracy,
    generate_close_pair_statistics,
    generate_synthetic_statistics,
    large_scale_coefficient,
    map_classify,
    map_classify_batch,
    run_trial,
    sample_channels,
    simulate_batch,
    simulate_transmission,
    simulate_trials,
    softmax_loss_and_grad,
    train_softmax_at,
    train_softmax_classifier,
)

from conftest import default_instance


def test_network_config_validation():
    with pytest.raises(ConfigurationError):
        NetworkConfig(cell_radius=0.5)
    with pytest.raises(ConfigurationError):
        NetworkConfig(pathloss_exponent=7.0)
    with pytest.raises(ConfigurationError):
        NetworkConfig(mode="satellite")


def test_normalized_channels_unit_mean_square():
    h = sample_channels(NetworkConfig(num_devices=100_000, rng_seed=11)).gains
    h2 = h**2
    se = h2.std() / np.sqrt(h2.size)
    assert abs(h2.mean() - 1.0) < 3 * se


def test_pathloss_at_cell_edge():
    cfg = NetworkConfig(mode="physical")
    assert large_scale_coefficient(500.0, cfg) == pytest.approx(500.0 ** (-1.75))


def test_physical_channels_bounded_by_pathloss_range():
    cfg = NetworkConfig(num_devices=2000, mode="physical", rng_seed=3)
    h = sample_channels(cfg).gains
    assert np.all(h > 0)
    # amplitude over pathloss is Rayleigh: its mean square is 1 at any distance
    assert np.median(h) < 1e-2


def test_channels_deterministic_and_nested():
    a = sample_channels(NetworkConfig(num_devices=6, rng_seed=5))
    b = sample_channels(NetworkConfig(num_devices=6, rng_seed=5))
    c = sample_channels(NetworkConfig(num_devices=3, rng_seed=5))
    assert np.array_equal(a.gains, b.gains)
    assert np.array_equal(a.gains[:3], c.gains)


def test_synthetic_statistics_shapes_and_noise():
    s = generate_synthetic_statistics(4, 12, 3, rng_seed=1)
    assert s.class_means.shape == (4, 12) and s.feature_variances.shape == (12,)
    assert s.sensing_noise_variances.shape == (3, 12)
    np.testing.assert_array_equal(s.sensing_noise_variances, 0.4)
    np.testing.assert_array_equal(s.feature_variances, 1.0)
    z = generate_synthetic_statistics(3, 5, 2, sensing_noise=0.0, rng_seed=1)
    assert np.all(z.sensing_noise_variances == 0)
    again = generate_synthetic_statistics(4, 12, 3, rng_seed=1)
    assert np.array_equal(again.class_means, s.class_means)


def test_zero_separation_exhausts_redraws():
    with pytest.raises(DegenerateInstanceError):
        generate_synthetic_statistics(3, 4, 2, class_separation=0.0)


def test_close_pair_construction():
    s = generate_close_pair_statistics(4, 6, 2, closeness=0.5, rng_seed=2)
    t = generate_synthetic_statistics(4, 6, 2, rng_seed=2)
    np.testing.assert_allclose(s.class_means[1] - s.class_means[0], 0.5 * (t.class_means[1] - t.class_means[0]))
    np.testing.assert_array_equal(s.class_means[2:], t.class_means[2:])


def test_zero_precoding_is_pure_noise():
    inst = default_instance(0)
    rng = np.random.default_rng(0)
    X = simulate_batch(inst, np.zeros(inst.shape), rng.integers(0, 4, 100_000), rng)
    n0 = inst.channel.channel_noise_variance
    se = n0 * np.sqrt(2.0 / (X.shape[0] - 1))
    assert np.all(np.abs(X.var(axis=0, ddof=1) - n0) < 3 * se)


def test_transmission_moments_match_model():
    inst = default_instance(1)
    b = sca_maxmin(inst).b
    d = received_moments(inst, b)
    rng = np.random.default_rng(7)
    n = 100_000
    for cls in (0, 3):
        X = simulate_batch(inst, b, np.full(n, cls), rng)
        var = d.received_variances
        assert np.all(np.abs(X.mean(axis=0) - d.received_means[cls]) < 3 * np.sqrt(var / n))
        assert np.all(np.abs(X.var(axis=0, ddof=1) - var) < 3 * var * np.sqrt(2.0 / (n - 1)))


def test_single_transmission_shape_and_class_check():
    inst = default_instance(0)
    x = simulate_transmission(inst, np.full(inst.shape, 0.1), 2, np.random.default_rng(0))
    assert x.shape == (12,)
    with pytest.raises(ConfigurationError):
        simulate_transmission(inst, np.full(inst.shape, 0.1), 4, np.random.default_rng(0))


def test_map_classify_examples():
    d = ReceivedDistribution([[0.0, 0.0], [1.0, 2.0], [3.0, -1.0]], [1.0, 2.0])
    assert map_classify(d, [3.0, -1.0]) == 2
    d1 = ReceivedDistribution([[0.0], [2.0]], [1.0])
    assert map_classify(d1, [0.9]) == 0
    assert map_classify(d1, [1.0]) == 0  # equidistant: smallest index
    assert map_classify(d1, [1.1]) == 1


def test_map_is_weighted_nearest_mean():
    rng = np.random.default_rng(0)
    means = rng.normal(size=(5, 7))
    var = rng.uniform(0.2, 3, 7)
    X = rng.normal(size=(500, 7))
    pred = map_classify_batch(ReceivedDistribution(means, var), X)
    logp = -(((X[:, None, :] - means[None]) ** 2) / (2 * var)).sum(axis=2)
    np.testing.assert_array_equal(pred, np.argmax(logp, axis=1))


def test_softmax_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    n, M, L = 60, 4, 3
    Z = rng.normal(size=(n, M))
    y = rng.integers(0, L, n)
    worst = 0.0
    for _ in range(100):
        p = rng.normal(size=M * L + L)
        _, g = softmax_loss_and_grad(p, Z, y, L)
        fd = np.empty_like(p)
        for i in range(p.size):
            e = np.zeros_like(p)
            e[i] = 1e-5
            fd[i] = (softmax_loss_and_grad(p + e, Z, y, L)[0] - softmax_loss_and_grad(p - e, Z, y, L)[0]) / 2e-5
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(fd))
    assert worst <= 1e-5


def test_softmax_separable_data():
    rng = np.random.default_rng(1)
    X = np.concatenate([rng.uniform(-3, -0.5, 100), rng.uniform(0.5, 3, 100)])[:, None]
    y = np.repeat([0, 1], 100)
    clf = train_softmax_classifier(X, y, 2, epochs=500)
    assert np.mean(clf.predict(X) == y) >= 0.99
    assert all(b <= a for a, b in zip(clf.losses, clf.losses[1:]))


def test_softmax_untrained_is_chance():
    inst = default_instance(2)
    b = np.full(inst.shape, 0.1)
    clf = train_softmax_at(inst, b, 0, epochs=0)
    rep = evaluate_accuracy(inst, b, clf, num_trials=8000, rng_seed=3)
    assert abs(rep.overall_accuracy - 0.25) < 3 * np.sqrt(0.25 * 0.75 / 8000)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_softmax_errors():
    X = np.random.default_rng(0).normal(size=(120, 2))
    y = np.repeat([0, 1], 60)
    with pytest.raises(InsufficientDataError):
        train_softmax_classifier(X[:80], np.repeat([0, 1], 40), 2)
    with pytest.raises(LearningRateError):
        train_softmax_classifier(X * 1e3, y, 2, learning_rate=1e308)


def _strong_instance():
    mu = np.array([[0.0] * 4, [6.0] * 4, [-6.0, 6.0, -6.0, 6.0]])
    stats = FeatureStatistics(mu, np.ones(4), np.zeros((2, 4)))
    return SystemInstance(stats, ChannelState([1.0, 1.0], 1e-9), PowerBudget([1.0, 1.0], [4.0, 4.0]))


def test_accuracy_near_one_at_large_gain():
    inst = _strong_instance()
    b = np.ones(inst.shape)
    from maxmin_aircomp.discriminant import min_gain_of

    assert min_gain_of(inst, b) > 100
    assert evaluate_accuracy(inst, b, num_trials=10_000, rng_seed=1).overall_accuracy >= 0.999


def test_zero_precoding_accuracy_is_chance():
    inst = default_instance(3)
    rep = evaluate_accuracy(inst, np.zeros(inst.shape), num_trials=10_000, rng_seed=2)
    assert abs(rep.overall_accuracy - 0.25) < 3 * np.sqrt(0.25 * 0.75 / 10_000)


def test_evaluation_independent_of_threads():
    inst = default_instance(4)
    b = mmse_allocation(inst)
    a = evaluate_accuracy(inst, b, num_trials=3000, rng_seed=9, workers=1)
    c = evaluate_accuracy(inst, b, num_trials=3000, rng_seed=9, workers=8)
    assert a.overall_accuracy == c.overall_accuracy
    np.testing.assert_array_equal(a.per_class_recall, c.per_class_recall)
    t1, x1 = simulate_trials(inst, b, 1000, 5, workers=1)
    t8, x8 = simulate_trials(inst, b, 1000, 5, workers=8)
    assert np.array_equal(t1, t8) and np.array_equal(x1, x8)


def test_report_invariants():
    rng = np.random.default_rng(0)
    true = rng.integers(0, 4, 1000)
    pred = np.where(rng.random(1000) < 0.6, true, rng.integers(0, 4, 1000))
    r = AccuracyReport.from_predictions(true, pred, 4)
    counts = np.bincount(true, minlength=4)
    assert r.overall_accuracy == pytest.approx(np.sum(counts * r.per_class_recall) / 1000)
    assert r.balanced_accuracy == pytest.approx(r.per_class_recall.mean())
    assert r.recall_spread == pytest.approx(r.per_class_recall.max() - r.per_class_recall.min())
    assert r.recall_spread >= 0
    assert r.per_class_recall.min() <= r.balanced_accuracy <= r.per_class_recall.max()


def test_map_beats_softmax_on_true_model():
    inst = default_instance(5)
    b = sca_maxmin(inst).b
    n = 6000
    m = evaluate_accuracy(inst, b, "map", n, rng_seed=4).overall_accuracy
    s = evaluate_accuracy(inst, b, "softmax", n, rng_seed=4).overall_accuracy
    assert m >= s - 2 * np.sqrt(m * (1 - m) / n)


def test_accuracy_invariant_to_label_permutation():
    inst = default_instance(6)
    b = np.full(inst.shape, 0.1)
    perm = np.array([2, 0, 3, 1])
    s = inst.stats
    pinst = SystemInstance(FeatureStatistics(s.class_means[perm], s.feature_variances, s.sensing_noise_variances),
                           inst.channel, inst.budget)
    # same underlying draws: relabel the classes of the original trials
    rng = np.random.default_rng(0)
    classes = rng.integers(0, 4, 4000)
    X = simulate_batch(inst, b, classes, np.random.default_rng(1))
    inv = np.argsort(perm)
    pred = map_classify_batch(received_moments(inst, b), X)
    ppred = map_classify_batch(received_moments(pinst, b), X)
    assert np.array_equal(inv[pred], ppred)
    a = AccuracyReport.from_predictions(classes, pred, 4).overall_accuracy
    c = AccuracyReport.from_predictions(inv[classes], ppred, 4).overall_accuracy
    assert a == c


def test_run_trial_outcome():
    inst = default_instance(0)
    out = run_trial(inst, np.full(inst.shape, 0.1), 1, np.random.default_rng(0))
    assert out.true_class == 1 and 0 <= out.predicted_class < 4 and out.received_feature.shape == (12,)
