"""Datasets, the MNIST IDX reader/writer, and Dirichlet partitioning."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = b"\x00\x00\x08\x03"
IDX_LABELS_MAGIC = b"\x00\x00\x08\x01"


class IdxFormatError(ValueError):
    pass


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxCountMismatchError(IdxFormatError):
    pass


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    y_count: int

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels)
        if x.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ValueError("labels must be 1-D with one entry per feature row")
        if x.shape[0] < 1:
            raise ValueError("a dataset needs at least one sample")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain NaN or inf")
        if y.dtype.kind not in "iu":
            raise ValueError("labels must be integers")
        y = y.astype(np.int64)
        if self.y_count < 1 or y.min() < 0 or y.max() >= self.y_count:
            raise ValueError(f"labels must lie in [0, {self.y_count})")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "y_count", int(self.y_count))

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> LabeledDataset:
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.y_count)


def class_means(classes: int, dim: int, separation: float) -> np.ndarray:
    """Deterministic class centers with pairwise distance >= ``separation``.

    With ``classes <= dim`` the centers sit on scaled basis vectors (all
    pairwise distances equal ``separation``); otherwise they are spaced
    along the first axis. Centers are shifted to have zero mean.
    """
    means = np.zeros((classes, dim))
    if classes <= dim:
        means[np.arange(classes), np.arange(classes)] = separation / np.sqrt(2.0)
    else:
        means[:, 0] = separation * np.arange(classes)
    return means - means.mean(axis=0)


def synth_classification(classes: int, dim: int, n: int, separation: float, rng) -> LabeledDataset:
    """Gaussian blobs, one unit-variance cluster per class.

    The class centers depend only on ``(classes, dim, separation)``, so two
    calls with different generators draw from the same distribution.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if dim < 1:
        raise ValueError("dim must be positive")
    if n < classes:
        raise ValueError("n must be at least the number of classes")
    if separation < 0 or not np.isfinite(separation):
        raise ValueError("separation must be finite and non-negative")
    labels = rng.permutation(np.arange(n) % classes)
    means = class_means(classes, dim, separation)
    features = means[labels] + rng.standard_normal((n, dim))
    return LabeledDataset(features, labels, classes)


def _read_exact(buf: bytes, offset: int, size: int, what: str) -> bytes:
    chunk = buf[offset:offset + size]
    if len(chunk) != size:
        raise IdxTruncatedError(f"{what}: expected {size} bytes at offset {offset}, found {len(chunk)}")
    return chunk


def load_idx(images_path, labels_path, y_count: int | None = None) -> LabeledDataset:
    """Read an IDX image/label file pair (the MNIST distribution format).

    Pixels are scaled to [0, 1] by dividing by 255. ``y_count`` defaults to
    ``max(label) + 1``.
    """
    img = Path(images_path).read_bytes()
    lab = Path(labels_path).read_bytes()

    if _read_exact(img, 0, 4, "images header") != IDX_IMAGES_MAGIC:
        raise IdxMagicError(f"{images_path}: bad magic {img[:4].hex()}, expected 00000803")
    if _read_exact(lab, 0, 4, "labels header") != IDX_LABELS_MAGIC:
        raise IdxMagicError(f"{labels_path}: bad magic {lab[:4].hex()}, expected 00000801")

    count, rows, cols = struct.unpack(">III", _read_exact(img, 4, 12, "images header"))
    (n_labels,) = struct.unpack(">I", _read_exact(lab, 4, 4, "labels header"))
    if count != n_labels:
        raise IdxCountMismatchError(f"images file holds {count} items but labels file holds {n_labels}")

    pixels = np.frombuffer(_read_exact(img, 16, count * rows * cols, "images payload"), dtype=np.uint8)
    labels = np.frombuffer(_read_exact(lab, 8, count, "labels payload"), dtype=np.uint8)
    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    if y_count is None:
        y_count = int(labels.max()) + 1 if count else 1
    return LabeledDataset(features, labels.astype(np.int64), y_count)


def write_idx(ds: LabeledDataset, images_path, labels_path, rows: int, cols: int) -> None:
    """Write ``ds`` as an IDX pair. Features must be multiples of 1/255 in [0, 1]."""
    if rows * cols != ds.dim:
        raise ValueError(f"rows*cols = {rows * cols} does not match feature dim {ds.dim}")
    scaled = ds.features * 255.0
    pixels = np.rint(scaled)
    if np.abs(scaled - pixels).max() > 1e-6 or pixels.min() < 0 or pixels.max() > 255:
        raise ValueError("features are not representable as 8-bit pixels")
    if ds.labels.max() > 255:
        raise ValueError("labels do not fit in one byte")
    n = len(ds)
    with open(images_path, "wb") as f:
        f.write(IDX_IMAGES_MAGIC + struct.pack(">III", n, rows, cols))
        f.write(pixels.astype(np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(IDX_LABELS_MAGIC + struct.pack(">I", n))
        f.write(ds.labels.astype(np.uint8).tobytes())


def _largest_remainder(q: np.ndarray, total: int) -> np.ndarray:
    raw = q * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        # stable sort: ties go to the lower agent index
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def dirichlet_partition(ds: LabeledDataset, m: int, mu: float, rng) -> list[np.ndarray]:
    """Split ``ds`` into ``m`` non-IID shards.

    For each class, proportions ``q ~ Dir(mu * ones(m))`` are drawn and the
    class's (shuffled) samples are dealt out in contiguous runs whose sizes
    follow ``q`` by largest-remainder rounding. Any shard left empty takes
    one sample from the currently largest shard.

    Returns a list of ``m`` sorted index arrays.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if not mu > 0 or not np.isfinite(mu):
        raise ValueError(f"mu must be a positive finite number, got {mu}")
    n = len(ds)
    if n < m:
        raise ValueError(f"cannot give {m} agents a nonempty shard from {n} samples")
    if m == 1:
        return [np.arange(n)]

    shards: list[list[int]] = [[] for _ in range(m)]
    for y in range(ds.y_count):
        idx = np.flatnonzero(ds.labels == y)
        if idx.size == 0:
            continue
        idx = rng.permutation(idx)
        q = rng.dirichlet(np.full(m, mu))
        if not np.all(np.isfinite(q)):
            raise FloatingPointError(f"Dirichlet draw degenerated for mu={mu}")
        counts = _largest_remainder(q, idx.size)
        start = 0
        for a, c in enumerate(counts):
            shards[a].extend(idx[start:start + c].tolist())
            start += c

    for a in range(m):
        if not shards[a]:
            donor = max(range(m), key=lambda k: (len(shards[k]), -k))
            shards[donor].sort()
            shards[a].append(shards[donor].pop())
    return [np.array(sorted(s), dtype=np.int64) for s in shards]


def write_partition_csv(shards, path) -> None:
    """Audit dump: one ``index,agent`` row per sample, sorted by index."""
    rows = sorted((int(i), a) for a, s in enumerate(shards) for i in s)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "agent"])
        w.writerows(rows)


def split_indices(n: int, fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie strictly between 0 and 1, got {fraction}")
    k = int(np.floor(fraction * n + 0.5))
    if k < 1 or k >= n:
        raise ValueError(f"fraction {fraction} of {n} samples leaves an empty side")
    perm = rng.permutation(n)
    return np.sort(perm[:k]), np.sort(perm[k:])


def make_validation_split(test: LabeledDataset, fraction: float, rng) -> tuple[LabeledDataset, LabeledDataset]:
    """Sample ``round(fraction * n)`` points for the shared validation set.

    Returns ``(validation, remainder)``.
    """
    q_idx, rest_idx = split_indices(len(test), fraction, rng)
    return test.subset(q_idx), test.subset(rest_idx)
