"""Monte Carlo inference over the AirComp link.

Channels and synthetic Gaussian-mixture features are drawn per the system
model, received features are simulated sample by sample, and classified
either by the exact MAP rule or by a softmax classifier trained on
simulated received features.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import ConfigurationError, DegenerateInstanceError, InsufficientDataError, LearningRateError
from .model import (
    DEGENERATE_EPS,
    ChannelState,
    FeatureStatistics,
    ReceivedDistribution,
    SystemInstance,
    check_precoding,
    class_pairs,
    received_moments,
)

log = logging.getLogger(__name__)

TRIAL_BLOCK = 256


@dataclass(frozen=True)
class NetworkConfig:
    num_devices: int = 3
    cell_radius: float = 500.0
    pathloss_exponent: float = 3.5
    reference_distance: float = 1.0
    mode: str = "normalized"  # or "physical"
    channel_noise_variance: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_devices < 1:
            raise ConfigurationError("num_devices must be positive")
        if not self.cell_radius > self.reference_distance > 0:
            raise ConfigurationError("need cell_radius > reference_distance > 0")
        if not 2.0 <= self.pathloss_exponent <= 6.0:
            raise ConfigurationError(f"pathloss_exponent must be in [2, 6], got {self.pathloss_exponent}")
        if self.mode not in ("physical", "normalized"):
            raise ConfigurationError(f"mode must be 'physical' or 'normalized', got {self.mode!r}")
        if not self.channel_noise_variance > 0:
            raise ConfigurationError("channel_noise_variance must be > 0")


def large_scale_coefficient(distance, config: NetworkConfig):
    """Amplitude path loss ``(d / d0) ** (-exponent / 2)``."""
    return (np.asarray(distance, dtype=float) / config.reference_distance) ** (-config.pathloss_exponent / 2.0)


def sample_channels(config: NetworkConfig) -> ChannelState:
    """Draw effective gains ``|phi_k h_k|`` for every device.

    Device k uses its own child stream of the seed, so the first K devices
    are identical whatever ``num_devices`` is.
    """
    children = np.random.SeedSequence(config.rng_seed).spawn(config.num_devices)
    gains = np.empty(config.num_devices)
    for k, child in enumerate(children):
        rng = np.random.default_rng(child)
        d = rng.uniform(config.reference_distance, config.cell_radius)
        amp = rng.rayleigh(scale=np.sqrt(0.5))  # unit mean-square
        phi = large_scale_coefficient(d, config) if config.mode == "physical" else 1.0
        gains[k] = phi * amp
    return ChannelState(gains, config.channel_noise_variance)


def _distinct_rows(means, eps=DEGENERATE_EPS):
    return all(np.max(np.abs(means[i] - means[j])) >= eps for i, j in class_pairs(means.shape[0]))


def generate_synthetic_statistics(
    num_classes=4,
    num_features=12,
    num_devices=3,
    class_separation=0.5,
    sensing_noise=0.4,
    rng_seed=0,
    max_attempts=100,
) -> FeatureStatistics:
    """Class means i.i.d. N(0, class_separation^2), unit feature variances and
    constant sensing noise on every device and element."""
    if num_classes < 2 or num_features < 1:
        raise ConfigurationError("need at least 2 classes and 1 feature")
    rng = np.random.default_rng(rng_seed)
    for attempt in range(max_attempts):
        means = rng.normal(0.0, class_separation, size=(num_classes, num_features))
        if _distinct_rows(means):
            if attempt:
                log.info("redrew class means %d times", attempt)
            return FeatureStatistics(
                means, np.ones(num_features), np.full((num_devices, num_features), float(sensing_noise))
            )
    raise DegenerateInstanceError(f"could not draw distinct class means in {max_attempts} attempts")


def generate_close_pair_statistics(
    num_classes=4,
    num_features=12,
    num_devices=3,
    class_separation=0.5,
    closeness=0.25,
    sensing_noise=0.4,
    rng_seed=0,
) -> FeatureStatistics:
    """Like ``generate_synthetic_statistics`` but classes 0 and 1 are pulled
    together: their mean difference is scaled by ``closeness``."""
    st = generate_synthetic_statistics(
        num_classes, num_features, num_devices, class_separation, sensing_noise, rng_seed
    )
    means = np.array(st.class_means)
    means[1] = means[0] + closeness * (means[1] - means[0])
    return FeatureStatistics(means, st.feature_variances, st.sensing_noise_variances)


def simulate_batch(instance: SystemInstance, b, classes, rng) -> np.ndarray:
    """Received feature vectors (n, M) for the given true classes."""
    b = check_precoding(instance, b)
    st = instance.stats
    classes = np.asarray(classes, dtype=int)
    n = classes.size
    K, M = instance.shape
    x = st.class_means[classes] + rng.standard_normal((n, M)) * np.sqrt(st.feature_variances)
    d = rng.standard_normal((n, K, M)) * np.sqrt(st.sensing_noise_variances)
    noise = rng.standard_normal((n, M)) * np.sqrt(instance.channel.channel_noise_variance)
    hb = instance.channel.gains[:, None] * b  # (K, M)
    return np.einsum("km,nkm->nm", hb, x[:, None, :] + d) + noise


def simulate_transmission(instance: SystemInstance, b, true_class, rng) -> np.ndarray:
    """One received feature vector ``sum_k h_k b_km (x_m + d_km) + n_m``."""
    if not 0 <= true_class < instance.num_classes:
        raise ConfigurationError(f"class index {true_class} out of range")
    return simulate_batch(instance, b, [true_class], rng)[0]


def map_classify(dist: ReceivedDistribution, received) -> int:
    x = np.asarray(received, dtype=float)[None, :]
    return int(kernels.map_classify_batch(x, dist.received_means, dist.received_variances)[0])


def map_classify_batch(dist: ReceivedDistribution, received) -> np.ndarray:
    X = np.ascontiguousarray(received, dtype=float)
    return kernels.map_classify_batch(X, dist.received_means, dist.received_variances)


# --- softmax classifier ---------------------------------------------------

def softmax_loss_and_grad(params, Z, y, num_classes):
    """Mean cross-entropy and its gradient; ``params`` is W (M*L) then bias (L)."""
    n, M = Z.shape
    W = params[: M * num_classes].reshape(M, num_classes)
    bias = params[M * num_classes:]
    logits = Z @ W + bias
    logits -= logits.max(axis=1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    loss = -np.mean(logp[np.arange(n), y])
    p = np.exp(logp)
    p[np.arange(n), y] -= 1.0
    p /= n
    return loss, np.concatenate([(Z.T @ p).ravel(), p.sum(axis=0)])


@dataclass(frozen=True)
class SoftmaxClassifier:
    weights: np.ndarray  # (M, L)
    bias: np.ndarray  # (L,)
    center: np.ndarray  # (M,)
    scale: np.ndarray  # (M,)
    losses: tuple = ()

    def predict(self, X):
        Z = (np.asarray(X, dtype=float) - self.center) / self.scale
        return np.argmax(Z @ self.weights + self.bias, axis=1)


def train_softmax_classifier(X, y, num_classes, epochs=300, learning_rate=0.5, min_per_class=50):
    """Full-batch gradient descent on standardized features.

    A step that would raise the loss is retried with half the learning
    rate, so the recorded losses never increase.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    counts = np.bincount(y, minlength=num_classes)
    if np.any(counts < min_per_class):
        raise InsufficientDataError(f"softmax training needs {min_per_class} samples per class, got {counts.tolist()}")
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    Z = (X - center) / scale
    M = X.shape[1]
    params = np.zeros(M * num_classes + num_classes)
    loss, grad = softmax_loss_and_grad(params, Z, y, num_classes)
    losses = [loss]
    lr = learning_rate
    for _ in range(epochs):
        for _ in range(60):
            trial = params - lr * grad
            new_loss, new_grad = softmax_loss_and_grad(trial, Z, y, num_classes)
            if not np.isfinite(new_loss):
                raise LearningRateError(f"non-finite training loss at learning rate {lr:g}")
            if new_loss <= loss:
                break
            lr *= 0.5
        else:
            break  # no decrease possible: at a minimum to machine precision
        params, loss, grad = trial, new_loss, new_grad
        losses.append(loss)
    W = params[: M * num_classes].reshape(M, num_classes)
    return SoftmaxClassifier(W, params[M * num_classes:], center, scale, tuple(losses))


# --- accuracy evaluation --------------------------------------------------

class TrialOutcome(NamedTuple):
    true_class: int
    predicted_class: int
    received_feature: np.ndarray


@dataclass(frozen=True)
class AccuracyReport:
    num_trials: int
    overall_accuracy: float
    per_class_recall: np.ndarray
    balanced_accuracy: float
    recall_spread: float
    class_counts: np.ndarray

    @classmethod
    def from_predictions(cls, true, pred, num_classes):
        true = np.asarray(true)
        pred = np.asarray(pred)
        counts = np.bincount(true, minlength=num_classes)
        hits = np.bincount(true[true == pred], minlength=num_classes)
        with np.errstate(invalid="ignore", divide="ignore"):
            recall = np.where(counts > 0, hits / np.maximum(counts, 1), np.nan)
        seen = recall[counts > 0]
        return cls(
            num_trials=int(true.size),
            overall_accuracy=float(hits.sum() / true.size) if true.size else float("nan"),
            per_class_recall=recall,
            balanced_accuracy=float(seen.mean()) if seen.size else float("nan"),
            recall_spread=float(seen.max() - seen.min()) if seen.size else float("nan"),
            class_counts=counts,
        )


def _block_rng(seed, block):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def simulate_trials(instance: SystemInstance, b, num_trials, rng_seed, workers=1):
    """True classes and received vectors for ``num_trials`` inference trials.

    Trials are cut into fixed blocks of ``TRIAL_BLOCK``; each block draws
    from a counter-based stream keyed by (seed, block index), so the result
    does not depend on ``workers``.
    """
    if num_trials < 1:
        raise ConfigurationError("num_trials must be >= 1")
    b = check_precoding(instance, b)
    L = instance.num_classes
    starts = list(range(0, num_trials, TRIAL_BLOCK))

    def run(j):
        rng = _block_rng(rng_seed, j)
        n = min(TRIAL_BLOCK, num_trials - starts[j])
        classes = rng.integers(0, L, size=n)
        return classes, simulate_batch(instance, b, classes, rng)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, range(len(starts))))
    else:
        parts = [run(j) for j in range(len(starts))]
    return np.concatenate([p[0] for p in parts]), np.vstack([p[1] for p in parts])


def train_softmax_at(instance: SystemInstance, b, rng_seed, samples_per_class=400, epochs=300, learning_rate=0.5):
    """Train a softmax classifier on received features simulated at ``b``."""
    rng = np.random.default_rng(np.random.SeedSequence(rng_seed, spawn_key=(0x7A11,)))
    classes = np.repeat(np.arange(instance.num_classes), samples_per_class)
    X = simulate_batch(instance, b, classes, rng)
    return train_softmax_classifier(X, classes, instance.num_classes, epochs, learning_rate)


def evaluate_accuracy(
    instance: SystemInstance, b, classifier="map", num_trials=1600, rng_seed=0, workers=1, softmax_options=None
) -> AccuracyReport:
    """Run ``num_trials`` independent inferences with uniformly drawn classes.

    ``classifier`` is ``"map"``, ``"softmax"`` (trained at ``b`` with a
    stream derived from ``rng_seed``) or any object with ``predict``.
    """
    true, X = simulate_trials(instance, b, num_trials, rng_seed, workers)
    if isinstance(classifier, str):
        if classifier == "map":
            pred = map_classify_batch(received_moments(instance, b), X)
        elif classifier == "softmax":
            clf = train_softmax_at(instance, b, rng_seed, **(softmax_options or {}))
            pred = clf.predict(X)
        else:
            raise ConfigurationError(f"unknown classifier {classifier!r}")
    else:
        pred = classifier.predict(X)
    return AccuracyReport.from_predictions(true, pred, instance.num_classes)


def run_trial(instance: SystemInstance, b, true_class, rng, classifier="map") -> TrialOutcome:
    x = simulate_transmission(instance, b, true_class, rng)
    if classifier == "map":
        pred = map_classify(received_moments(instance, b), x)
    else:
        pred = int(classifier.predict(x[None, :])[0])
    return TrialOutcome(int(true_class), pred, x)
