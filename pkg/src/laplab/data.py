"""Desk-scale labeled image datasets: synthetic generators, IDX/CSV
ingestion, and training-time augmentation.

Images are float64 (N, C, H, W) arrays in [0, 1]; labels are integer
arrays in [0, num_classes).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class DataError(ValueError):
    pass


class IdxMagicError(DataError):
    pass


class IdxCountMismatchError(DataError):
    pass


class IdxTruncatedError(DataError):
    pass


class LabelRangeError(DataError):
    pass


@dataclass
class Dataset:
    images: np.ndarray      # (N, C, H, W) in [0, 1]
    labels: np.ndarray      # (N,) ints in [0, num_classes)
    num_classes: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.images) < 1:
            raise DataError(f"images must be a non-empty (N,C,H,W) array, got {self.images.shape}")
        if self.labels.shape != (len(self.images),):
            raise DataError("labels length must match image count")
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise DataError("image values must lie in [0, 1]")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise LabelRangeError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.images)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.num_classes)


def _stripe_pattern(size: int) -> np.ndarray:
    s = np.where((np.arange(size) // 2) % 2 == 0, 1.0, -1.0)
    return np.tile(s[:, None], (1, size))


def _checker_pattern(size: int) -> np.ndarray:
    s = np.where((np.arange(size) // 2) % 2 == 0, 1.0, -1.0)
    return s[:, None] * s[None, :]


def gen_synthetic(kind: str, n: int, size: int, noise_std: float, seed: int,
                  num_classes: int = 2) -> Dataset:
    """Generate a two-class texture dataset, deterministic per seed.

    bars-vs-checkers: fixed-phase stripe vs checkerboard patterns with
    per-image amplitude jitter; noiseless versions are linearly separable.
    gaussian-blobs: class-specific Gaussian bumps with center jitter.
    """
    if n < 2:
        raise DataError("n must be at least 2")
    if size < 8:
        raise DataError("size must be at least 8")
    if noise_std < 0:
        raise DataError("noise_std must be non-negative")
    if num_classes != 2:
        raise DataError("synthetic generators provide exactly 2 classes")
    rng = np.random.default_rng(seed)
    labels = np.zeros(n, dtype=np.int64)
    labels[n // 2:] = 1
    rng.shuffle(labels)
    images = np.empty((n, 1, size, size))
    if kind == "bars-vs-checkers":
        pats = (_stripe_pattern(size), _checker_pattern(size))
        amps = rng.uniform(0.3, 0.45, size=n)
        for i in range(n):
            images[i, 0] = 0.5 + amps[i] * pats[labels[i]]
    elif kind == "gaussian-blobs":
        yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        centers = ((size * 0.3, size * 0.3), (size * 0.7, size * 0.7))
        sigma = size / 5.0
        jit = rng.uniform(-size * 0.08, size * 0.08, size=(n, 2))
        amps = rng.uniform(0.5, 1.0, size=n)
        for i in range(n):
            cy, cx = centers[labels[i]]
            bump = np.exp(-((yy - cy - jit[i, 0]) ** 2 + (xx - cx - jit[i, 1]) ** 2) / (2 * sigma ** 2))
            images[i, 0] = amps[i] * bump
    else:
        raise DataError(f"unknown synthetic kind {kind!r}")
    if noise_std > 0:
        images += rng.normal(0.0, noise_std, size=images.shape)
    np.clip(images, 0.0, 1.0, out=images)
    return Dataset(images, labels, 2)


def _read_be32(f, what):
    b = f.read(4)
    if len(b) != 4:
        raise IdxTruncatedError(f"truncated while reading {what}")
    return struct.unpack(">I", b)[0]


def load_idx(images_path, labels_path, num_classes: int | None = None) -> Dataset:
    """Parse big-endian IDX image/label file pair; pixels scaled by /255."""
    with open(images_path, "rb") as f:
        magic = _read_be32(f, "image magic")
        if magic != IDX_IMAGE_MAGIC:
            raise IdxMagicError(f"image magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}")
        count = _read_be32(f, "image count")
        rows = _read_be32(f, "row count")
        cols = _read_be32(f, "column count")
        raw = f.read(count * rows * cols)
        if len(raw) != count * rows * cols:
            raise IdxTruncatedError("truncated image payload")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(count, 1, rows, cols)
    with open(labels_path, "rb") as f:
        magic = _read_be32(f, "label magic")
        if magic != IDX_LABEL_MAGIC:
            raise IdxMagicError(f"label magic 0x{magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}")
        lcount = _read_be32(f, "label count")
        raw = f.read(lcount)
        if len(raw) != lcount:
            raise IdxTruncatedError("truncated label payload")
        labels = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    if lcount != count:
        raise IdxCountMismatchError(f"{count} images but {lcount} labels")
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    elif labels.max() >= num_classes:
        raise LabelRangeError(f"label {labels.max()} outside [0, {num_classes})")
    return Dataset(images.astype(np.float64) / 255.0, labels, num_classes)


def load_csv(path, shape=None, num_classes: int | None = None) -> Dataset:
    """Read "label,p0,p1,..." rows with pixel values already in [0, 1]."""
    with open(path) as f:
        header = f.readline().strip()
        if not header.startswith("label,"):
            raise DataError('CSV header must start with "label,"')
        rows = [line.strip().split(",") for line in f if line.strip()]
    if not rows:
        raise DataError("CSV has no data rows")
    labels = np.array([int(r[0]) for r in rows], dtype=np.int64)
    pixels = np.array([[float(v) for v in r[1:]] for r in rows])
    if shape is None:
        side = int(round(np.sqrt(pixels.shape[1])))
        if side * side != pixels.shape[1]:
            raise DataError(f"cannot infer a square shape from {pixels.shape[1]} pixels")
        shape = (1, side, side)
    images = pixels.reshape((len(rows),) + tuple(shape))
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    return Dataset(images, labels, num_classes)


def hflip(images: np.ndarray) -> np.ndarray:
    return images[:, :, :, ::-1].copy()


def augment(images: np.ndarray, seed: int) -> np.ndarray:
    """Reflect-pad by 2, random crop back, flip horizontally with p=0.5."""
    rng = np.random.default_rng(seed)
    n, c, h, w = images.shape
    padded = np.pad(images, ((0, 0), (0, 0), (2, 2), (2, 2)), mode="reflect")
    offs = rng.integers(0, 5, size=(n, 2))
    flips = rng.random(n) < 0.5
    out = np.empty_like(images)
    for i in range(n):
        dy, dx = offs[i]
        crop = padded[i, :, dy:dy + h, dx:dx + w]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return out
