"""Pairwise, minimum and average discriminant gains in the received space."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, IngestionError
from .model import SystemInstance, ReceivedDistribution, atomic_write_text, class_pairs, fmt, received_moments


@dataclass(frozen=True)
class GainTable:
    pairs: list  # [(l, l'), ...] lexicographic, l' > l
    per_pair_per_element: np.ndarray  # (num_pairs, M)
    per_pair: np.ndarray  # (num_pairs,)
    min_gain: float
    avg_gain: float
    argmin_pair: tuple

    def gain(self, l, lp):
        if l > lp:
            l, lp = lp, l
        return float(self.per_pair[self.pairs.index((l, lp))])


def pair_element_gains(dist: ReceivedDistribution) -> np.ndarray:
    var = dist.received_variances
    if np.any(~(var > 0)):
        raise DomainError("received variances must be strictly positive")
    mu = dist.received_means
    pairs = class_pairs(mu.shape[0])
    i = np.array([p[0] for p in pairs], dtype=int)
    j = np.array([p[1] for p in pairs], dtype=int)
    return (mu[i] - mu[j]) ** 2 / var[None, :]


def gain_table(dist: ReceivedDistribution) -> GainTable:
    entries = pair_element_gains(dist)
    pairs = class_pairs(dist.received_means.shape[0])
    per_pair = entries.sum(axis=1)
    k = int(np.argmin(per_pair))  # first occurrence -> lexicographically smallest pair
    return GainTable(
        pairs=pairs,
        per_pair_per_element=entries,
        per_pair=per_pair,
        min_gain=float(per_pair[k]),
        avg_gain=float(per_pair.mean()),
        argmin_pair=pairs[k],
    )


def min_gain_of(instance: SystemInstance, b) -> float:
    """Minimum pairwise discriminant gain achieved by precoding ``b``."""
    return gain_table(received_moments(instance, b)).min_gain


def gains_of(instance: SystemInstance, b) -> GainTable:
    return gain_table(received_moments(instance, b))


def gain_table_to_csv(table: GainTable) -> str:
    """Three blocks separated by blank lines: per element, per pair, scalars."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["l", "lp", "m", "gain_elem"])
    for (l, lp), row in zip(table.pairs, table.per_pair_per_element):
        for m, v in enumerate(row):
            w.writerow([l, lp, m, fmt(v)])
    buf.write("\n")
    w.writerow(["l", "lp", "gain_pair"])
    for (l, lp), v in zip(table.pairs, table.per_pair):
        w.writerow([l, lp, fmt(v)])
    buf.write("\n")
    w.writerow(["min_gain", "avg_gain"])
    w.writerow([fmt(table.min_gain), fmt(table.avg_gain)])
    return buf.getvalue()


def write_gain_table(path, table: GainTable):
    atomic_write_text(path, gain_table_to_csv(table))


def read_gain_table(path) -> GainTable:
    with open(path, encoding="utf-8", newline="") as f:
        blocks = f.read().split("\n\n")
    if len(blocks) != 3:
        raise IngestionError(f"{path}: expected 3 blocks, found {len(blocks)}")
    elem = list(csv.reader(io.StringIO(blocks[0])))
    pair = list(csv.reader(io.StringIO(blocks[1])))
    scal = list(csv.reader(io.StringIO(blocks[2])))
    if elem[0] != ["l", "lp", "m", "gain_elem"] or pair[0] != ["l", "lp", "gain_pair"]:
        raise IngestionError(f"{path}: unexpected headers")
    pairs = [(int(r[0]), int(r[1])) for r in pair[1:]]
    M = 1 + max(int(r[2]) for r in elem[1:])
    entries = np.zeros((len(pairs), M))
    for r in elem[1:]:
        entries[pairs.index((int(r[0]), int(r[1]))), int(r[2])] = float(r[3])
    per_pair = np.array([float(r[2]) for r in pair[1:]])
    k = int(np.argmin(per_pair))
    return GainTable(pairs, entries, per_pair, float(scal[1][0]), float(scal[1][1]), pairs[k])
