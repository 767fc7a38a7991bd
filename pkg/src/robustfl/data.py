"""Datasets, Non-IID partitioning and label noise.

All randomness flows from explicit integer seeds through
``numpy.random.default_rng`` so the same arguments always give the same
bytes.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CACHE_MAGIC = b"RFLD"
CACHE_VERSION = 1
# magic, version, n, d, num_classes, seed
_CACHE_HEADER = struct.Struct(">4sIQIIq")


class IdxFormatError(ValueError):
    """Base class for malformed IDX input."""


class BadMagicError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be an n x d matrix, got shape {self.features.shape}")
        n = self.features.shape[0]
        if n == 0:
            raise ValueError("dataset is empty")
        if self.labels.shape != (n,):
            raise ValueError(f"expected {n} labels, got shape {self.labels.shape}")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int
    dirichlet_alpha: float = 0.3
    lognormal_sigma: float = 0.9
    noise_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError(f"num_clients must be positive, got {self.num_clients}")
        if not self.dirichlet_alpha > 0:
            raise ValueError(f"dirichlet_alpha must be positive, got {self.dirichlet_alpha}")
        if self.lognormal_sigma < 0:
            raise ValueError(f"lognormal_sigma must be nonnegative, got {self.lognormal_sigma}")
        if not 0 <= self.noise_rate < 1:
            raise ValueError(f"noise_rate must lie in [0, 1), got {self.noise_rate}")


@dataclass
class Partition:
    assignments: list[np.ndarray]
    noise_flags: np.ndarray = field(default=None)

    @property
    def sizes(self) -> list[int]:
        return [len(a) for a in self.assignments]


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    raw = weights / weights.sum() * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        # Stable ordering keeps ties deterministic.
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def client_sizes(n: int, num_clients: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Lognormal(0, sigma) client sizes summing to n, each at least 1."""
    if num_clients > n:
        raise ValueError(f"cannot split {n} samples across {num_clients} clients")
    if sigma > 0:
        raw = rng.lognormal(mean=0.0, sigma=sigma, size=num_clients)
    else:
        raw = np.ones(num_clients)
    sizes = _largest_remainder(raw, n)
    # Floor at one sample, taking the deficit from the largest clients.
    while np.any(sizes < 1):
        i = int(np.argmin(sizes))
        j = int(np.argmax(sizes))
        sizes[i] += 1
        sizes[j] -= 1
    return sizes


def dirichlet_partition(data: Dataset, spec: PartitionSpec) -> Partition:
    n = len(data)
    K = spec.num_clients
    if K > n:
        raise ValueError(f"num_clients={K} exceeds dataset size {n}")
    counts = data.class_counts()
    if np.any(counts == 0):
        empty = np.flatnonzero(counts == 0).tolist()
        raise ValueError(f"dataset has empty classes {empty}")

    rng = np.random.default_rng([spec.seed, 0x5EED, 1])
    sizes = client_sizes(n, K, spec.lognormal_sigma, rng)
    pools = []
    for c in range(data.num_classes):
        idx = np.flatnonzero(data.labels == c)
        pools.append(list(rng.permutation(idx)))

    assignments = []
    for k in range(K):
        props = rng.dirichlet(np.full(data.num_classes, spec.dirichlet_alpha))
        if not np.all(np.isfinite(props)) or props.sum() <= 0:
            props = np.full(data.num_classes, 1.0 / data.num_classes)
        target = _largest_remainder(props, int(sizes[k]))
        taken = []
        for c in range(data.num_classes):
            want = int(target[c])
            if want:
                taken.extend(pools[c][:want])
                del pools[c][:want]
        short = int(sizes[k]) - len(taken)
        if short > 0:
            # Class pools ran dry: fill from whatever remains, uniformly.
            remainder = np.array([i for pool in pools for i in pool], dtype=np.int64)
            pick = set(rng.choice(remainder, size=short, replace=False).tolist())
            taken.extend(sorted(pick))
            for c in range(data.num_classes):
                pools[c] = [i for i in pools[c] if i not in pick]
        assignments.append(np.sort(np.asarray(taken, dtype=np.int64)))
    return Partition(assignments, np.zeros(n, dtype=bool))


def inject_label_noise(data: Dataset, noise_rate: float, seed: int) -> tuple[Dataset, np.ndarray]:
    """Relabel exactly round(noise_rate * n) uniformly chosen samples as class 0."""
    if not 0 <= noise_rate < 1:
        raise ValueError(f"noise_rate must lie in [0, 1), got {noise_rate}")
    n = len(data)
    n_noisy = int(math.floor(noise_rate * n + 0.5))
    rng = np.random.default_rng([seed, 0x0015E])
    flags = np.zeros(n, dtype=bool)
    flags[rng.choice(n, size=n_noisy, replace=False)] = True
    labels = data.labels.copy()
    labels[flags] = 0
    return Dataset(data.features, labels, data.num_classes), flags


def partition_with_noise(data: Dataset, spec: PartitionSpec) -> tuple[list[Dataset], Partition]:
    """Partition, then corrupt labels per client with its own seed stream."""
    part = dirichlet_partition(data, spec)
    flags = np.zeros(len(data), dtype=bool)
    shards = []
    for k, idx in enumerate(part.assignments):
        shard, local_flags = inject_label_noise(data.subset(idx), spec.noise_rate, seed=spec.seed * 1_000_003 + k)
        flags[idx] = local_flags
        shards.append(shard)
    part.noise_flags = flags
    return shards, part


def simplex_means(num_classes: int, dim: int, separation: float) -> np.ndarray:
    """Class means on a regular simplex with pairwise distance ``separation``."""
    if dim < num_classes:
        raise ValueError(f"dim={dim} must be at least num_classes={num_classes}")
    eye = np.eye(num_classes, dim)
    centered = eye - eye.mean(axis=0, keepdims=True)
    return centered * (separation / math.sqrt(2.0))


def synthetic_classification(
    num_classes: int, samples_per_class: int, dim: int, class_separation: float, seed: int
) -> Dataset:
    """Unit-covariance Gaussian blobs, rows ordered by class."""
    if num_classes < 1 or samples_per_class < 1 or dim < 1:
        raise ValueError("num_classes, samples_per_class and dim must be positive")
    rng = np.random.default_rng([seed, 0xDA7A])
    means = simplex_means(num_classes, dim, class_separation)
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    features = means[labels] + rng.standard_normal((labels.size, dim))
    return Dataset(features, labels, num_classes)


def _read_exact(fh, count: int, path) -> bytes:
    buf = fh.read(count)
    if len(buf) != count:
        raise TruncatedFileError(f"{path}: expected {count} bytes, got {len(buf)}")
    return buf


def _read_idx(path, expected_magic: int, header_ints: int) -> tuple[tuple[int, ...], bytes]:
    path = Path(path)
    with path.open("rb") as fh:
        (magic,) = struct.unpack(">I", _read_exact(fh, 4, path))
        if magic != expected_magic:
            raise BadMagicError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
        dims = struct.unpack(f">{header_ints - 1}I", _read_exact(fh, 4 * (header_ints - 1), path))
        size = math.prod(dims)
        body = _read_exact(fh, size, path)
    return dims, body


def load_idx(images_path, labels_path, num_classes: int | None = None) -> Dataset:
    """Read an MNIST/EMNIST-style IDX pair; pixels are scaled to [0, 1]."""
    (count, rows, cols), pixels = _read_idx(images_path, IDX_IMAGES_MAGIC, 4)
    (label_count,), raw_labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 2)
    if count != label_count:
        raise CountMismatchError(f"{images_path} holds {count} images but {labels_path} holds {label_count} labels")
    images = np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows * cols)
    labels = np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(images.astype(float) / 255.0, labels, num_classes)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images (n, rows, cols) and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">4I", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">2I", IDX_LABELS_MAGIC, labels.size))
        fh.write(labels.tobytes())


def save_dataset_cache(path, data: Dataset, seed: int) -> None:
    """Binary cache: header, then float64 features and int64 labels (big-endian)."""
    n, d = data.features.shape
    with open(path, "wb") as fh:
        fh.write(_CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, n, d, data.num_classes, seed))
        fh.write(data.features.astype(">f8").tobytes())
        fh.write(data.labels.astype(">i8").tobytes())


def load_dataset_cache(path) -> tuple[Dataset, int]:
    with open(path, "rb") as fh:
        head = _read_exact(fh, _CACHE_HEADER.size, path)
        magic, version, n, d, num_classes, seed = _CACHE_HEADER.unpack(head)
        if magic != CACHE_MAGIC:
            raise BadMagicError(f"{path}: not a dataset cache")
        if version != CACHE_VERSION:
            raise IdxFormatError(f"{path}: unsupported cache version {version}")
        feats = np.frombuffer(_read_exact(fh, 8 * n * d, path), dtype=">f8").reshape(n, d)
        labels = np.frombuffer(_read_exact(fh, 8 * n, path), dtype=">i8")
    return Dataset(feats.astype(float), labels.astype(np.int64), num_classes), seed
