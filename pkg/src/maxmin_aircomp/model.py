"""System parameters and propagation of feature statistics through AirComp.

All arrays stored on the dataclasses below are made read-only at
construction, so instances can be shared freely between threads.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, IngestionError, InsufficientDataError

FEAS_EPS = 1e-6
DEGENERATE_EPS = 1e-9


def _frozen(a, ndim, name):
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise ConfigurationError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(watt):
    return 10.0 * np.log10(np.asarray(watt, dtype=float)) + 30.0


@dataclass(frozen=True)
class FeatureStatistics:
    """Class-conditional Gaussian feature model.

    ``class_means`` is (L, M), ``feature_variances`` is (M,) and is shared by
    all classes, ``sensing_noise_variances`` is (K, M).
    """

    class_means: np.ndarray
    feature_variances: np.ndarray
    sensing_noise_variances: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "class_means", _frozen(self.class_means, 2, "class_means"))
        object.__setattr__(self, "feature_variances", _frozen(self.feature_variances, 1, "feature_variances"))
        object.__setattr__(
            self, "sensing_noise_variances", _frozen(self.sensing_noise_variances, 2, "sensing_noise_variances")
        )
        M = self.class_means.shape[1]
        if self.feature_variances.shape != (M,):
            raise ConfigurationError(f"feature_variances has shape {self.feature_variances.shape}, expected ({M},)")
        if self.sensing_noise_variances.shape[1] != M:
            raise ConfigurationError(
                f"sensing_noise_variances has {self.sensing_noise_variances.shape[1]} columns, expected {M}"
            )

    @property
    def num_classes(self) -> int:
        return self.class_means.shape[0]

    @property
    def num_features(self) -> int:
        return self.class_means.shape[1]

    @property
    def num_devices(self) -> int:
        return self.sensing_noise_variances.shape[0]


@dataclass(frozen=True)
class ChannelState:
    """Real effective amplitude gains (phase already compensated) and noise power."""

    gains: np.ndarray
    channel_noise_variance: float

    def __post_init__(self):
        object.__setattr__(self, "gains", _frozen(self.gains, 1, "gains"))
        object.__setattr__(self, "channel_noise_variance", float(self.channel_noise_variance))


@dataclass(frozen=True)
class PowerBudget:
    """Per-slot power caps and total energy caps over all M slots, in watts."""

    per_slot: np.ndarray
    total: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "per_slot", _frozen(self.per_slot, 1, "per_slot"))
        object.__setattr__(self, "total", _frozen(self.total, 1, "total"))
        if self.per_slot.shape != self.total.shape:
            raise ConfigurationError("per_slot and total budgets must have the same length")

    @classmethod
    def from_dbm(cls, power_dbm, num_devices, num_features, total_factor=1.0):
        """Uniform budget: P_k from dBm and total cap ``total_factor * M * P_k``."""
        p = np.full(num_devices, float(dbm_to_watt(power_dbm)))
        return cls(per_slot=p, total=total_factor * num_features * p)


@dataclass(frozen=True)
class ReceivedDistribution:
    received_means: np.ndarray  # (L, M)
    received_variances: np.ndarray  # (M,)

    def __post_init__(self):
        object.__setattr__(self, "received_means", _frozen(self.received_means, 2, "received_means"))
        object.__setattr__(self, "received_variances", _frozen(self.received_variances, 1, "received_variances"))


@dataclass(frozen=True)
class SystemInstance:
    stats: FeatureStatistics
    channel: ChannelState
    budget: PowerBudget

    def __post_init__(self):
        K = self.channel.gains.shape[0]
        if self.stats.num_devices != K:
            raise ConfigurationError(
                f"sensing noise is given for {self.stats.num_devices} devices but there are {K} channel gains"
            )
        if self.budget.per_slot.shape[0] != K:
            raise ConfigurationError(f"power budget is given for {self.budget.per_slot.shape[0]} devices, expected {K}")

    @property
    def num_devices(self) -> int:
        return self.channel.gains.shape[0]

    @property
    def num_features(self) -> int:
        return self.stats.num_features

    @property
    def num_classes(self) -> int:
        return self.stats.num_classes

    @property
    def shape(self):
        """Shape (K, M) of a precoding matrix for this instance."""
        return (self.num_devices, self.num_features)


def class_pairs(num_classes):
    """Unordered class pairs (l, l') with l' > l in lexicographic order."""
    return list(itertools.combinations(range(num_classes), 2))


def check_precoding(instance, b):
    b = np.asarray(b, dtype=float)
    if b.shape != instance.shape:
        raise ConfigurationError(f"precoding matrix has shape {b.shape}, expected {instance.shape}")
    if not np.all(np.isfinite(b)):
        raise ConfigurationError("precoding matrix contains non-finite values")
    return b


def is_feasible(b, budget, eps=FEAS_EPS):
    """Per-slot and total power constraints, with relative tolerance ``eps``."""
    b = np.asarray(b, dtype=float)
    p = budget.per_slot[:, None]
    if np.any(b**2 > p * (1.0 + eps)):
        return False
    return bool(np.all(np.sum(b**2, axis=1) <= budget.total * (1.0 + eps)))


def received_moments(instance: SystemInstance, b) -> ReceivedDistribution:
    """Means and shared variance of each received feature element.

    The server sees ``sum_k h_k b_km x_km + n`` in slot m, so class means are
    scaled by the effective sum gain and the variance collects the scaled
    feature variance, the per-device sensing noise and the channel noise.
    """
    b = check_precoding(instance, b)
    h = instance.channel.gains
    st = instance.stats
    s = h @ b  # (M,)
    means = st.class_means * s[None, :]
    hb2 = (h[:, None] * b) ** 2
    var = s**2 * st.feature_variances + np.sum(hb2 * st.sensing_noise_variances, axis=0)
    var = var + instance.channel.channel_noise_variance
    return ReceivedDistribution(means, var)


class Issue(NamedTuple):
    kind: str  # "invariant" or "degenerate_pair"
    message: str
    pair: tuple | None = None


def validate_instance(instance: SystemInstance, eps_deg=DEGENERATE_EPS) -> list[Issue]:
    """Return every violated invariant; an empty list means the instance is valid."""
    issues = []
    st, ch, bu = instance.stats, instance.channel, instance.budget
    if st.num_classes < 2:
        issues.append(Issue("invariant", f"need at least 2 classes, got {st.num_classes}"))
    if st.num_features < 1:
        issues.append(Issue("invariant", "need at least 1 feature element"))
    arrays = {
        "class_means": st.class_means,
        "feature_variances": st.feature_variances,
        "sensing_noise_variances": st.sensing_noise_variances,
        "gains": ch.gains,
        "per_slot": bu.per_slot,
        "total": bu.total,
    }
    for name, a in arrays.items():
        if not np.all(np.isfinite(a)):
            issues.append(Issue("invariant", f"{name} contains non-finite values"))
    for m in np.flatnonzero(~(st.feature_variances > 0)):
        issues.append(Issue("invariant", f"feature variance of element {m} is {st.feature_variances[m]!r}, must be > 0"))
    if np.any(st.sensing_noise_variances < 0):
        issues.append(Issue("invariant", "sensing noise variances must be non-negative"))
    for k in np.flatnonzero(~(ch.gains > 0)):
        issues.append(Issue("invariant", f"channel gain of device {k} is {ch.gains[k]!r}, must be > 0"))
    if not (np.isfinite(ch.channel_noise_variance) and ch.channel_noise_variance > 0):
        issues.append(Issue("invariant", "channel noise variance must be finite and > 0"))
    if np.any(~(bu.per_slot > 0)):
        issues.append(Issue("invariant", "per-slot power caps must be > 0"))
    if np.any(~(bu.total > 0)):
        issues.append(Issue("invariant", "total power caps must be > 0"))
    mu = st.class_means
    for l, lp in class_pairs(st.num_classes):
        if np.max(np.abs(mu[l] - mu[lp])) < eps_deg:
            issues.append(Issue("degenerate_pair", f"classes {l} and {lp} have identical means", (l, lp)))
    return issues


def estimate_statistics(
    features,
    labels,
    device_samples=None,
    num_devices=None,
    sensing_noise=None,
) -> FeatureStatistics:
    """Estimate the feature model from labelled ground-truth samples.

    ``features`` is (N, M) with integer ``labels`` in [0, L). Feature
    variances are pooled within-class (unbiased). If ``device_samples``
    (S, K, M) is given, each row holds K noisy copies of one ground-truth
    vector and per-device sensing noise is estimated from deviations to the
    cross-device mean, with the bias of that reference removed. Otherwise
    ``num_devices`` and a scalar or (K, M) ``sensing_noise`` must be passed.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise IngestionError(f"features must be (N, M) with N labels, got {X.shape} and {y.shape}")
    if not np.all(np.isfinite(X)):
        raise IngestionError("feature samples contain non-finite values")
    if y.size and (not np.issubdtype(y.dtype, np.integer) or y.min() < 0):
        raise IngestionError("labels must be non-negative integers")
    L = int(y.max()) + 1 if y.size else 0
    if L < 2:
        raise InsufficientDataError("need samples from at least 2 classes")
    M = X.shape[1]
    means = np.empty((L, M))
    ss = np.zeros(M)
    for l in range(L):
        Xl = X[y == l]
        if Xl.shape[0] < 2:
            raise InsufficientDataError(f"class {l} has {Xl.shape[0]} samples, need at least 2")
        means[l] = Xl.mean(axis=0)
        ss += np.sum((Xl - means[l]) ** 2, axis=0)
    variances = ss / (X.shape[0] - L)
    if np.any(variances <= 0):
        bad = np.flatnonzero(variances <= 0).tolist()
        raise InsufficientDataError(f"pooled feature variance is zero for elements {bad}")

    if device_samples is not None:
        noise = _estimate_sensing_noise(device_samples)
        if noise.shape[1] != M:
            raise IngestionError(f"device samples have {noise.shape[1]} features, expected {M}")
    else:
        if num_devices is None or sensing_noise is None:
            raise ConfigurationError("num_devices and sensing_noise are required without device samples")
        noise = np.broadcast_to(np.asarray(sensing_noise, dtype=float), (num_devices, M)).copy()
    return FeatureStatistics(means, variances, noise)


def _estimate_sensing_noise(device_samples):
    D = np.asarray(device_samples, dtype=float)
    if D.ndim != 3:
        raise IngestionError(f"device samples must be (S, K, M), got shape {D.shape}")
    if not np.all(np.isfinite(D)):
        raise IngestionError("device samples contain non-finite values")
    S, K, M = D.shape
    if S < 2:
        raise InsufficientDataError("need at least 2 device samples")
    if K < 2:
        raise InsufficientDataError("sensing noise needs at least 2 devices to form a reference")
    r = D - D.mean(axis=1, keepdims=True)
    v = r.var(axis=0, ddof=1)
    # Var(r_k) = d_k (1 - 2/K) + sum_j d_j / K^2
    total = v.sum(axis=0) / (1.0 - 1.0 / K)
    if K == 2:
        # individual variances are not identifiable from two devices
        est = np.tile(total / 2.0, (2, 1))
    else:
        est = (v - total / K**2) / (1.0 - 2.0 / K)
    return np.maximum(est, 0.0)


# --- CSV interfaces -------------------------------------------------------

def fmt(x) -> str:
    return format(float(x), ".17g")


def atomic_write_text(path, text):
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    tmp.replace(path)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def read_feature_samples(path):
    """Read a ``label,f1,...,fM`` CSV; returns (features, labels)."""
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise IngestionError(f"{path}: empty file")
    header = rows[0]
    M = len(header) - 1
    if header[0] != "label" or M < 1 or header[1:] != [f"f{i + 1}" for i in range(M)]:
        raise IngestionError(f"{path}: header must be label,f1,...,fM, got {','.join(header)}")
    X = np.empty((len(rows) - 1, M))
    y = np.empty(len(rows) - 1, dtype=int)
    for i, row in enumerate(rows[1:]):
        if len(row) != M + 1:
            raise IngestionError(f"{path}:{i + 2}: expected {M + 1} fields, got {len(row)}")
        try:
            y[i] = int(row[0])
            X[i] = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise IngestionError(f"{path}:{i + 2}: {exc}") from None
    if not np.all(np.isfinite(X)):
        raise IngestionError(f"{path}: non-finite feature values")
    return X, y


def write_feature_samples(path, features, labels):
    X = np.asarray(features, dtype=float)
    header = ["label"] + [f"f{i + 1}" for i in range(X.shape[1])]
    rows = [[int(l)] + [fmt(v) for v in x] for l, x in zip(labels, X)]
    atomic_write_text(path, _csv_text(header, rows))


STAT_FILES = ("means.csv", "variances.csv", "sensing_noise.csv")


def write_statistics(directory, stats: FeatureStatistics):
    """Write means.csv (class,f1..fM), variances.csv (feature,variance) and
    sensing_noise.csv (device,f1..fM) into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    fcols = [f"f{i + 1}" for i in range(stats.num_features)]
    atomic_write_text(
        d / "means.csv",
        _csv_text(["class"] + fcols, [[l] + [fmt(v) for v in row] for l, row in enumerate(stats.class_means)]),
    )
    atomic_write_text(
        d / "variances.csv",
        _csv_text(["feature", "variance"], [[m + 1, fmt(v)] for m, v in enumerate(stats.feature_variances)]),
    )
    atomic_write_text(
        d / "sensing_noise.csv",
        _csv_text(
            ["device"] + fcols, [[k] + [fmt(v) for v in row] for k, row in enumerate(stats.sensing_noise_variances)]
        ),
    )


def _read_table(path, first):
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][0] != first:
        raise IngestionError(f"{path}: first header column must be {first!r}")
    try:
        return np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    except ValueError as exc:
        raise IngestionError(f"{path}: {exc}") from None


def read_statistics(directory) -> FeatureStatistics:
    d = Path(directory)
    means = _read_table(d / "means.csv", "class")
    var = _read_table(d / "variances.csv", "feature")[:, 0]
    noise = _read_table(d / "sensing_noise.csv", "device")
    return FeatureStatistics(means, var, noise)
