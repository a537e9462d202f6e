"""Synthetic datasets, CSV loading and agent partitioning."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

SCHEMES = ("dirichlet", "iid", "by_label")


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __len__(self):
        return int(self.y.shape[0])

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.n_classes)


@dataclass
class AgentShard:
    agent_id: int
    X: np.ndarray
    y: np.ndarray
    indices: np.ndarray

    @property
    def n(self) -> int:
        return int(self.y.shape[0])


@dataclass(frozen=True)
class PartitionSpec:
    scheme: str = "dirichlet"
    alpha: float = 0.5
    num_agents: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"partition.scheme must be one of {SCHEMES}")
        if self.scheme == "dirichlet" and not self.alpha > 0:
            raise ConfigError("partition.alpha must be > 0")
        if self.num_agents < 1:
            raise ConfigError("number of agents must be >= 1")


def generate_synthetic(n_classes: int, dim: int, per_class: int, separation: float, seed,
                       noise_std: float = 1.0) -> Dataset:
    """Isotropic Gaussian blobs, one per class.

    Class means are random unit directions scaled by ``separation`` (in units of
    the per-coordinate noise std). Samples are shuffled.
    """
    if n_classes < 2 or dim < 1 or per_class < 1:
        raise ConfigError("need n_classes >= 2, dim >= 1, per_class >= 1")
    rng = np.random.default_rng(seed)
    means = _draw_means(rng, n_classes, dim, separation, noise_std)
    y = np.repeat(np.arange(n_classes), per_class)
    X = means[y] + noise_std * rng.normal(size=(y.size, dim))
    order = rng.permutation(y.size)
    return Dataset(X[order], y[order].astype(np.int64), n_classes)


def blob_means(n_classes: int, dim: int, separation: float, seed, noise_std: float = 1.0) -> np.ndarray:
    """The class means :func:`generate_synthetic` uses for the same arguments."""
    return _draw_means(np.random.default_rng(seed), n_classes, dim, separation, noise_std)


def _draw_means(rng, n_classes, dim, separation, noise_std):
    directions = rng.normal(size=(n_classes, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return separation * noise_std * directions


def train_test_split(data: Dataset, test_fraction: float, seed) -> tuple[Dataset, Dataset]:
    if not 0 < test_fraction < 1:
        raise ConfigError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(data))
    n_test = max(1, int(round(test_fraction * len(data))))
    return data.subset(np.sort(order[n_test:])), data.subset(np.sort(order[:n_test]))


def partition(data: Dataset, spec: PartitionSpec) -> list[AgentShard]:
    """Split ``data`` into ``spec.num_agents`` disjoint, non-empty shards.

    Dirichlet: for every class draw agent proportions from Dir(alpha) and deal
    that class's samples out multinomially. Any agent left empty then takes one
    random sample from an agent holding at least two.
    """
    n, N = len(data), spec.num_agents
    if n == 0:
        raise DataError("cannot partition an empty dataset")
    if N > n:
        raise ConfigError(f"{N} agents but only {n} samples")
    rng = np.random.default_rng(spec.seed)
    buckets: list[list[int]] = [[] for _ in range(N)]
    if spec.scheme == "iid":
        for a, chunk in enumerate(np.array_split(rng.permutation(n), N)):
            buckets[a] = chunk.tolist()
    elif spec.scheme == "by_label":
        order = np.argsort(data.y, kind="stable")
        for a, chunk in enumerate(np.array_split(order, N)):
            buckets[a] = chunk.tolist()
    else:
        for k in range(data.n_classes):
            idx = np.flatnonzero(data.y == k)
            if idx.size == 0:
                continue
            idx = rng.permutation(idx)
            props = rng.dirichlet(np.full(N, spec.alpha))
            counts = rng.multinomial(idx.size, props)
            start = 0
            for a in range(N):
                buckets[a].extend(idx[start:start + counts[a]].tolist())
                start += counts[a]
        for a in range(N):
            if buckets[a]:
                continue
            donors = [b for b in range(N) if len(buckets[b]) >= 2]
            donor = donors[int(rng.integers(len(donors)))]
            buckets[a].append(buckets[donor].pop(int(rng.integers(len(buckets[donor])))))
    shards = []
    for a, bucket in enumerate(buckets):
        idx = np.sort(np.asarray(bucket, dtype=np.int64))
        shards.append(AgentShard(a, data.X[idx], data.y[idx], idx))
    return shards


def class_histogram(labels, n_classes: int) -> np.ndarray:
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes).astype(np.float64)
    return counts / counts.sum()


def mean_tv_distance(shards: list[AgentShard], data: Dataset) -> float:
    """Average total-variation distance between agent and global label histograms."""
    ref = class_histogram(data.y, data.n_classes)
    return float(np.mean([0.5 * np.abs(class_histogram(s.y, data.n_classes) - ref).sum() for s in shards]))


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(path, n_features: int | None = None) -> Dataset:
    """Read a comma-separated file whose last column is an integer class label.

    A first row that does not parse as numbers is treated as a header. Errors
    name the 1-based line of the offending row.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    features, labels = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if lineno == 1 and not all(_is_number(c) for c in row):
                continue
            if len(row) < 2:
                raise DataError("expected at least one feature and a label", lineno)
            try:
                values = [float(c) for c in row[:-1]]
                label_f = float(row[-1])
            except ValueError as exc:
                raise DataError(f"unparseable value ({exc})", lineno) from None
            if not all(math.isfinite(v) for v in values) or not math.isfinite(label_f):
                raise DataError("non-finite value", lineno)
            if label_f != int(label_f) or label_f < 0:
                raise DataError(f"label {row[-1]!r} is not a non-negative integer", lineno)
            width = n_features if n_features is not None else (len(features[0]) if features else len(values))
            if len(values) != width:
                raise DataError(f"expected {width} features, got {len(values)}", lineno)
            features.append(values)
            labels.append(int(label_f))
    if not labels:
        raise DataError(f"{path} contains no samples")
    y = np.asarray(labels, dtype=np.int64)
    return Dataset(np.asarray(features, dtype=np.float64), y, int(y.max()) + 1)
