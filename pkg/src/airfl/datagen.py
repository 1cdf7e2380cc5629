"""Synthetic dataset generation, label-skewed partitioning and class statistics.

The training data is a class-conditional Gaussian mixture whose difficulty is
controlled by the distance between cluster centers, so a centrally trained
softmax classifier provides a cheap accuracy oracle.  Workers receive slices
of the data with a controllable degree of label skew; the resulting per-worker
and per-group class proportions feed the grouping objective and the
convergence calculators.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ValidationError

PROP_TOL = 1e-9  # proportion vectors must sum to 1 within this tolerance


@dataclass(frozen=True)
class Dataset:
    """A labelled classification dataset held as dense arrays.

    features: (n, num_features) float64
    labels:   (n,) int64, values in [0, num_classes)
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ValidationError("features must be 2-D and labels 1-D")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValidationError("features and labels disagree on sample count")
        if self.labels.min(initial=0) < 0 or self.labels.max(initial=0) >= self.num_classes:
            raise ValidationError("labels must lie in [0, num_classes)")
        present = np.bincount(self.labels, minlength=self.num_classes)
        if (present == 0).any():
            raise ValidationError("every class needs at least one sample")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def to_json(self) -> str:
        return json.dumps(
            {
                "num_classes": self.num_classes,
                "features": self.features.tolist(),
                "labels": self.labels.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Dataset":
        obj = json.loads(text)
        return cls(
            features=np.asarray(obj["features"], dtype=np.float64),
            labels=np.asarray(obj["labels"], dtype=np.int64),
            num_classes=int(obj["num_classes"]),
        )


@dataclass(frozen=True)
class Partition:
    """Disjoint assignment of sample indices to workers, plus derived counts."""

    assignments: tuple  # tuple of int64 index arrays, one per worker
    num_classes: int
    labels: np.ndarray  # labels of the partitioned dataset
    data_size: np.ndarray = field(init=False)  # d_i, (N,)
    class_counts: np.ndarray = field(init=False)  # d_i^k, (N, K)

    def __post_init__(self):
        n_total = sum(len(a) for a in self.assignments)
        flat = np.concatenate([np.asarray(a) for a in self.assignments])
        if (
            len(np.unique(flat)) != n_total
            or n_total != len(self.labels)
            or (n_total and (flat.min() < 0 or flat.max() >= len(self.labels)))
        ):
            raise ValidationError("assignments must be disjoint and cover the dataset")
        counts = np.zeros((len(self.assignments), self.num_classes), dtype=np.int64)
        for i, idx in enumerate(self.assignments):
            counts[i] = np.bincount(self.labels[idx], minlength=self.num_classes)
        object.__setattr__(self, "class_counts", counts)
        object.__setattr__(self, "data_size", counts.sum(axis=1))

    @property
    def num_workers(self) -> int:
        return len(self.assignments)

    @property
    def total_size(self) -> int:
        return int(self.data_size.sum())

    def alpha(self) -> np.ndarray:
        """Per-worker share of the total data size."""
        return self.data_size / self.total_size

    def global_props(self) -> np.ndarray:
        """Per-class share of the total data size (lambda_k)."""
        return self.class_counts.sum(axis=0) / self.total_size

    def worker_props(self, worker: int) -> np.ndarray:
        """Class proportions on one worker (alpha_i^k)."""
        return self.class_counts[worker] / self.data_size[worker]

    def worker_view(self, ds: Dataset, worker: int) -> tuple[np.ndarray, np.ndarray]:
        idx = self.assignments[worker]
        return ds.features[idx], ds.labels[idx]

    def to_json(self) -> str:
        return json.dumps(
            {
                "num_classes": self.num_classes,
                "labels": self.labels.tolist(),
                "assignments": [np.asarray(a).tolist() for a in self.assignments],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Partition":
        obj = json.loads(text)
        return cls(
            assignments=tuple(np.asarray(a, dtype=np.int64) for a in obj["assignments"]),
            num_classes=int(obj["num_classes"]),
            labels=np.asarray(obj["labels"], dtype=np.int64),
        )


def class_means(num_classes: int, num_features: int, separation: float) -> np.ndarray:
    """Cluster centers at distance ``separation`` from the origin.

    The geometry is a fixed function of the shape arguments (orthonormal
    directions when the feature space allows, fixed random unit directions
    otherwise), so datasets generated under different seeds are independent
    draws from the same population and can serve as held-out sets.
    """
    rng = np.random.default_rng(20240501)
    if num_features >= num_classes:
        q, _ = np.linalg.qr(rng.normal(size=(num_features, num_classes)))
        directions = q[:, :num_classes].T
    else:
        directions = rng.normal(size=(num_classes, num_features))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return separation * directions


def generate_synthetic(
    seed: int,
    num_classes: int,
    num_features: int,
    num_samples: int,
    separation: float,
) -> Dataset:
    """Generate a balanced class-conditional Gaussian classification dataset.

    Each class draws samples from an isotropic unit-variance Gaussian around
    its fixed cluster center (see :func:`class_means`), so larger separations
    give an easier problem.  Class counts differ by at most one and the result
    is a pure function of ``seed``.
    """
    if num_classes < 2:
        raise ConfigurationError("need at least two classes")
    if num_samples < num_classes:
        raise ConfigurationError("need at least one sample per class")
    if num_features < 1:
        raise ConfigurationError("need at least one feature")
    if separation < 0:
        raise ConfigurationError("separation must be nonnegative")

    rng = np.random.default_rng(seed)
    means = class_means(num_classes, num_features, separation)

    base, extra = divmod(num_samples, num_classes)
    counts = [base + (1 if k < extra else 0) for k in range(num_classes)]
    feats = []
    labels = []
    for k, c in enumerate(counts):
        feats.append(means[k] + rng.normal(size=(c, num_features)))
        labels.append(np.full(c, k, dtype=np.int64))
    features = np.concatenate(feats)
    labels = np.concatenate(labels)
    order = rng.permutation(num_samples)
    return Dataset(features=features[order], labels=labels[order], num_classes=num_classes)


def partition_label_skew(
    ds: Dataset,
    num_workers: int,
    classes_per_worker: int = 1,
    size_jitter: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Partition:
    """Split a dataset across workers with block label skew.

    With ``classes_per_worker=1`` the workers are divided into contiguous
    blocks of ``num_workers / num_classes`` and block b holds only class b,
    mirroring the canonical one-label-per-worker split.  Larger values give
    each worker a cyclic window of classes starting at its block's class;
    ``classes_per_worker=num_classes`` is an IID split.

    ``size_jitter > 0`` scales each worker's take by a uniform draw from
    [1 - size_jitter/2, 1 + size_jitter/2] (so 1.0 spans [0.5, 1.5]),
    producing unequal data sizes while preserving each worker's class menu.
    """
    k = ds.num_classes
    if num_workers < k:
        raise ConfigurationError("need at least one worker per class")
    if num_workers % k != 0:
        raise ConfigurationError("worker count must be divisible by the class count")
    if not 1 <= classes_per_worker <= k:
        raise ConfigurationError("classes_per_worker must be in [1, num_classes]")
    if size_jitter > 0 and rng is None:
        raise ConfigurationError("size_jitter needs an explicit rng")

    block = num_workers // k  # workers per base class
    # holders[c] = worker ids whose class menu includes c, in id order
    holders: list[list[int]] = [[] for _ in range(k)]
    for w in range(num_workers):
        base_class = w // block
        for m in range(classes_per_worker):
            holders[(base_class + m) % k].append(w)

    weights = np.ones(num_workers)
    if size_jitter > 0:
        weights = rng.uniform(1 - size_jitter / 2, 1 + size_jitter / 2, size=num_workers)

    by_class = [np.flatnonzero(ds.labels == c) for c in range(k)]
    assignments: list[list[int]] = [[] for _ in range(num_workers)]
    for c in range(k):
        idx = by_class[c]
        owners = sorted(holders[c])
        if len(idx) < len(owners):
            raise ConfigurationError(
                f"class {c} has {len(idx)} samples for {len(owners)} holders"
            )
        shares = weights[owners] / weights[owners].sum()
        counts = _largest_remainder(shares, len(idx))
        start = 0
        for w, c_w in zip(owners, counts):
            assignments[w].extend(idx[start : start + c_w].tolist())
            start += c_w
    return Partition(
        assignments=tuple(np.asarray(sorted(a), dtype=np.int64) for a in assignments),
        num_classes=k,
        labels=ds.labels,
    )


def _largest_remainder(shares: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation proportional to shares, each holder getting >= 1."""
    raw = shares * total
    counts = np.maximum(np.floor(raw).astype(int), 1)
    # distribute the remaining units to the largest fractional parts
    while counts.sum() < total:
        frac = raw - counts
        counts[np.argmax(frac)] += 1
    while counts.sum() > total:
        over = np.where(counts > 1, counts - raw, -np.inf)
        counts[np.argmax(over)] -= 1
    return counts


def emd(group_props, global_props) -> float:
    """L1 distance between two class-proportion vectors.

    Both vectors must have the same length and sum to one within 1e-9; inputs
    inside the tolerance are renormalized, anything else is rejected.  The sum
    is exactly rounded (math.fsum) so textbook values come out exact.
    """
    a = np.asarray(group_props, dtype=np.float64)
    b = np.asarray(global_props, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError("proportion vectors must be 1-D and equal length")
    for v in (a, b):
        if (v < 0).any():
            raise ValidationError("proportions must be nonnegative")
        if abs(v.sum() - 1.0) > PROP_TOL:
            raise ValidationError("proportion vector does not sum to 1")
    a = a / a.sum()
    b = b / b.sum()
    return math.fsum(abs(x - y) for x, y in zip(a, b))
