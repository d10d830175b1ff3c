"""Dataset loading (CIFAR-10 binary, IDX), synthetic blobs, normalization, augmentation."""

import gzip
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .tensor import DTYPE

CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"
CIFAR_IMAGE_BYTES = 3 * 32 * 32


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    class_count: int
    mean: tuple = None
    std: tuple = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError(f"labels outside [0, {self.class_count})")

    def __len__(self):
        return len(self.labels)

    def subset(self, n):
        return replace(self, images=self.images[:n], labels=self.labels[:n])


@dataclass(frozen=True)
class AugmentConfig:
    pad: int = 4
    crop: int = 32
    hflip_prob: float = 0.5


# ---------------------------------------------------------------------------
# CIFAR-10
# ---------------------------------------------------------------------------

def read_cifar_file(path, classes=10, label_bytes=1):
    path = Path(path)
    raw = path.read_bytes()
    rec = label_bytes + CIFAR_IMAGE_BYTES
    if len(raw) % rec:
        offset = len(raw) - len(raw) % rec
        raise FormatError(f"{path}: truncated record at byte offset {offset} "
                          f"(file is {len(raw)} bytes, records are {rec})")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, rec)
    labels = arr[:, label_bytes - 1].astype(np.int64)
    bad = np.flatnonzero(labels >= classes)
    if bad.size:
        i = int(bad[0])
        raise FormatError(f"{path}: label {labels[i]} out of range at byte offset "
                          f"{i * rec + label_bytes - 1}")
    images = arr[:, label_bytes:].reshape(-1, 3, 32, 32).astype(DTYPE) / DTYPE(255)
    return images, labels


def load_cifar10(directory):
    directory = Path(directory)
    parts = [read_cifar_file(directory / name) for name in CIFAR_TRAIN_FILES]
    train = Dataset(np.concatenate([p[0] for p in parts]),
                    np.concatenate([p[1] for p in parts]), 10)
    test = Dataset(*read_cifar_file(directory / CIFAR_TEST_FILE), 10)
    return train, test


# ---------------------------------------------------------------------------
# IDX (MNIST-style)
# ---------------------------------------------------------------------------

def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def load_idx(path):
    """Read an unsigned-byte IDX file.

    One-dimensional files come back as int64 labels, anything else as a
    float tensor scaled to [0, 1].
    """
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] != 0x08:
        raise FormatError(f"{path}: bad IDX magic {raw[:4].hex()}")
    ndim = raw[3]
    head = 4 + 4 * ndim
    if ndim == 0 or len(raw) < head:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = int(np.prod(dims))
    if len(raw) - head != count:
        raise FormatError(f"{path}: dims {dims} need {count} payload bytes, "
                          f"found {len(raw) - head} after offset {head}")
    data = np.frombuffer(raw, dtype=np.uint8, offset=head).reshape(dims)
    if ndim == 1:
        return data.astype(np.int64)
    return data.astype(DTYPE) / DTYPE(255)


def write_idx(path, array):
    array = np.asarray(array, dtype=np.uint8)
    header = bytes([0, 0, 0x08, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.tobytes())


def load_idx_dataset(images_path, labels_path, classes=10):
    images = load_idx(images_path)
    if images.ndim == 3:
        images = images[:, None]
    return Dataset(images, load_idx(labels_path), classes)


# ---------------------------------------------------------------------------
# Synthetic
# ---------------------------------------------------------------------------

def synthesize_blobs(classes, per_class, dim, spread, seed):
    """Isotropic Gaussian blobs around centers drawn uniformly from [-1, 1]^dim."""
    if classes < 2:
        raise ConfigError(f"synthetic_classes must be >= 2, got {classes}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xB10B]))
    centers = rng.uniform(-1, 1, (classes, dim))
    labels = np.repeat(np.arange(classes), per_class)
    points = centers[labels] + spread * rng.standard_normal((labels.size, dim))
    return Dataset(points.astype(DTYPE), labels, classes)


# ---------------------------------------------------------------------------
# Normalization and augmentation
# ---------------------------------------------------------------------------

def channel_stats(d):
    axes = (0,) if d.images.ndim == 2 else (0, 2, 3)
    x = d.images.astype(np.float64)
    mean, std = x.mean(axis=axes), x.std(axis=axes)
    if np.any(std == 0):
        raise DataError(f"zero standard deviation in channel(s) {np.flatnonzero(std == 0).tolist()}")
    return tuple(mean.tolist()), tuple(std.tolist())


def normalize(d, mean, std):
    shape = (1, -1) if d.images.ndim == 2 else (1, -1, 1, 1)
    m = np.asarray(mean, dtype=np.float64).reshape(shape)
    s = np.asarray(std, dtype=np.float64).reshape(shape)
    if np.any(s == 0):
        raise DataError("zero standard deviation in normalization statistics")
    images = ((d.images - m) / s).astype(DTYPE)
    return replace(d, images=images, mean=tuple(mean), std=tuple(std))


def augment_batch(x, aug, rng):
    """Zero-pad, take a random crop per image, then flip horizontally at random."""
    n, c, h, w = x.shape
    p, crop = aug.pad, aug.crop
    if crop > h + 2 * p or crop > w + 2 * p:
        raise ConfigError(f"crop {crop} larger than padded image {h + 2 * p}×{w + 2 * p}")
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    oy = rng.integers(0, h + 2 * p - crop + 1, n)
    ox = rng.integers(0, w + 2 * p - crop + 1, n)
    flip = rng.random(n) < aug.hflip_prob
    out = np.empty((n, c, crop, crop), dtype=x.dtype)
    for i in range(n):
        patch = x[i, :, oy[i]:oy[i] + crop, ox[i]:ox[i] + crop]
        out[i] = patch[:, :, ::-1] if flip[i] else patch
    return out


def batch_stream(d, batch_size, phase, aug=None, rng=None):
    """Yield ``(images, labels)`` minibatches.

    The train phase shuffles (with ``rng``), augments when ``aug`` is given and
    drops a trailing batch of one sample; the infer phase walks the data in order.
    """
    n = len(d)
    if phase == "train":
        rng = rng if rng is not None else np.random.default_rng(0)
        order = rng.permutation(n)
    else:
        order = np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if phase == "train" and idx.size < 2:
            break
        x = d.images[idx]
        if phase == "train" and aug is not None and x.ndim == 4:
            x = augment_batch(x, aug, rng)
        yield x, d.labels[idx]


def normalize_augment(d, stats, aug, phase, batch_size, seed=0):
    """Normalize with training-split ``stats`` then stream batches."""
    nd = normalize(d, *stats)
    return batch_stream(nd, batch_size, phase, aug, np.random.default_rng(seed))
