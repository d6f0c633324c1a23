"""Synthetic generators, IDX/CSV parsing, and augmentation properties."""

import struct

import numpy as np
import pytest

from laplab.data import (Dataset, DataError, IdxCountMismatchError, IdxMagicError,
                         IdxTruncatedError, LabelRangeError, augment, gen_synthetic,
                         hflip, load_csv, load_idx)


def perceptron_train_accuracy(ds, epochs=50):
    """Tiny perceptron: converges to 100% iff the data is separable."""
    x = ds.images.reshape(len(ds), -1)
    y = np.where(ds.labels == 0, -1.0, 1.0)
    w = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(epochs):
        mistakes = 0
        for i in range(len(x)):
            if y[i] * (x[i] @ w + b) <= 0:
                w += y[i] * x[i]
                b += y[i]
                mistakes += 1
        if mistakes == 0:
            break
    preds = np.sign(x @ w + b)
    return float(np.mean(preds == y))


@pytest.mark.parametrize("kind", ["bars-vs-checkers", "gaussian-blobs"])
def test_noiseless_data_linearly_separable(kind):
    ds = gen_synthetic(kind, 64, 16, 0.0, seed=0)
    assert perceptron_train_accuracy(ds) == 1.0


def test_generator_deterministic():
    a = gen_synthetic("bars-vs-checkers", 32, 16, 0.3, seed=7)
    b = gen_synthetic("bars-vs-checkers", 32, 16, 0.3, seed=7)
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.labels, b.labels)


def test_generator_range_and_balance():
    ds = gen_synthetic("bars-vs-checkers", 100, 16, 0.5, seed=3)
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
    assert np.bincount(ds.labels).tolist() == [50, 50]


def test_generator_validates_arguments():
    with pytest.raises(DataError):
        gen_synthetic("bars-vs-checkers", 1, 16, 0.3, seed=0)
    with pytest.raises(DataError):
        gen_synthetic("bars-vs-checkers", 10, 4, 0.3, seed=0)
    with pytest.raises(DataError):
        gen_synthetic("bars-vs-checkers", 10, 16, -0.1, seed=0)
    with pytest.raises(DataError):
        gen_synthetic("mystery", 10, 16, 0.3, seed=0)


def write_idx_pair(tmp_path, pixels, labels, image_magic=0x803, label_magic=0x801,
                   truncate_images=0):
    n, h, w = pixels.shape
    img = tmp_path / "images.idx"
    lbl = tmp_path / "labels.idx"
    body = struct.pack(">IIII", image_magic, n, h, w) + pixels.astype(np.uint8).tobytes()
    if truncate_images:
        body = body[:-truncate_images]
    img.write_bytes(body)
    lbl.write_bytes(struct.pack(">II", label_magic, len(labels)) +
                    np.asarray(labels, dtype=np.uint8).tobytes())
    return img, lbl


def test_idx_pixel_scaling(tmp_path):
    pixels = np.array([[[0, 255], [128, 64]]], dtype=np.uint8)
    img, lbl = write_idx_pair(tmp_path, pixels, [1])
    ds = load_idx(img, lbl, num_classes=2)
    np.testing.assert_array_equal(
        ds.images[0, 0], np.array([[0.0, 1.0], [128 / 255, 64 / 255]]))


def test_idx_wrong_magic(tmp_path):
    img, lbl = write_idx_pair(tmp_path, np.zeros((1, 2, 2), np.uint8), [0],
                              image_magic=0x804)
    with pytest.raises(IdxMagicError):
        load_idx(img, lbl)


def test_idx_count_mismatch(tmp_path):
    img, lbl = write_idx_pair(tmp_path, np.zeros((2, 2, 2), np.uint8), [0])
    with pytest.raises(IdxCountMismatchError):
        load_idx(img, lbl)


def test_idx_truncated(tmp_path):
    img, lbl = write_idx_pair(tmp_path, np.zeros((2, 2, 2), np.uint8), [0, 1],
                              truncate_images=3)
    with pytest.raises(IdxTruncatedError):
        load_idx(img, lbl)


def test_idx_label_out_of_declared_range(tmp_path):
    img, lbl = write_idx_pair(tmp_path, np.zeros((1, 2, 2), np.uint8), [5])
    with pytest.raises(LabelRangeError):
        load_idx(img, lbl, num_classes=2)


def test_csv_round_trip(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("label,p0,p1,p2,p3\n0,0.0,0.25,0.5,1.0\n1,1.0,0.75,0.5,0.0\n")
    ds = load_csv(path)
    assert ds.images.shape == (2, 1, 2, 2)
    assert ds.labels.tolist() == [0, 1]
    assert ds.images[0, 0, 0, 1] == 0.25


def test_constant_image_unchanged_by_augment():
    images = np.full((4, 1, 16, 16), 0.37)
    out = augment(images, seed=5)
    assert np.array_equal(out, images)


def test_double_flip_is_identity():
    rng = np.random.default_rng(0)
    images = rng.uniform(0, 1, (3, 1, 8, 8))
    assert np.array_equal(hflip(hflip(images)), images)


def test_augment_deterministic_and_in_range():
    rng = np.random.default_rng(1)
    images = rng.uniform(0, 1, (8, 1, 16, 16))
    a = augment(images, seed=9)
    b = augment(images, seed=9)
    assert np.array_equal(a, b)
    assert a.min() >= 0.0 and a.max() <= 1.0
    assert a.shape == images.shape


def test_dataset_rejects_out_of_range_values():
    with pytest.raises(DataError):
        Dataset(np.full((1, 1, 2, 2), 1.5), np.array([0]), 2)
