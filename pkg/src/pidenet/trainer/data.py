"""Datasets: the synthetic long-range task and the CIFAR-10 binary format."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

CIFAR_RECORD = 3073
CIFAR_SIDE = 32
CIFAR_TRAIN_FILES = tuple(f"data_batch_{k}.bin" for k in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    name: str = "dataset"
    classes: int = 10

    @property
    def input_hw(self) -> tuple[int, int]:
        return self.x_train.shape[1], self.x_train.shape[2]

    @property
    def channels(self) -> int:
        return self.x_train.shape[3]


# ---------------------------------------------------------------------------
# synthetic long-range task

# 3x3 marker shapes; a pair of markers is "same" (label 1) or "different" (label 0)
MARKERS = np.array(
    [
        [[0, 1, 0], [1, 1, 1], [0, 1, 0]],  # plus
        [[1, 0, 1], [0, 1, 0], [1, 0, 1]],  # x
        [[1, 1, 1], [1, 0, 1], [1, 1, 1]],  # ring
        [[1, 1, 0], [1, 0, 1], [0, 1, 1]],  # diagonal ribbon
    ],
    dtype=float,
)


@dataclass
class SyntheticLongRangeSpec:
    image_size: int = 32
    marker_size: int = 3
    min_separation: float = 20.0
    classes: int = 2
    noise_sigma: float = 0.1
    shapes: int = 4

    def __post_init__(self):
        if self.marker_size != MARKERS.shape[1]:
            raise ValueError(f"marker size must be {MARKERS.shape[1]}")
        if not 2 <= self.shapes <= len(MARKERS):
            raise ValueError(f"shapes must lie in [2, {len(MARKERS)}]")
        if self.classes != 2:
            raise ValueError("the long-range task is binary (same vs different)")
        span = self.image_size - self.marker_size
        if span * np.sqrt(2) < self.min_separation:
            raise ValueError("image too small for the requested marker separation")


def _place_pair(rng: np.random.Generator, spec: SyntheticLongRangeSpec) -> tuple[np.ndarray, np.ndarray]:
    hi = spec.image_size - spec.marker_size + 1
    while True:
        a = rng.integers(0, hi, size=2)
        b = rng.integers(0, hi, size=2)
        if np.hypot(*(a - b)) >= spec.min_separation:
            return a, b


def gen_longrange(
    spec: SyntheticLongRangeSpec, seed: int, count: int, return_positions: bool = False
):
    """``count`` single-channel images with two markers far apart.

    Exactly ``count // 2`` samples are "same" pairs, so the classes are
    balanced by construction. Marker centres are separated by at least
    ``spec.min_separation`` pixels (Euclidean, rejection sampled).
    """
    rng = np.random.default_rng(seed)
    labels = np.zeros(count, dtype=np.int64)
    labels[: count // 2] = 1
    rng.shuffle(labels)
    x = rng.normal(0.0, spec.noise_sigma, size=(count, spec.image_size, spec.image_size, 1))
    k = spec.marker_size
    positions = np.empty((count, 2, 2), dtype=np.int64)
    for i in range(count):
        first = rng.integers(spec.shapes)
        if labels[i]:
            second = first
        else:
            second = (first + rng.integers(1, spec.shapes)) % spec.shapes
        a, b = _place_pair(rng, spec)
        positions[i] = (a, b)
        x[i, a[0] : a[0] + k, a[1] : a[1] + k, 0] += MARKERS[first]
        x[i, b[0] : b[0] + k, b[1] : b[1] + k, 0] += MARKERS[second]
    if return_positions:
        return x, labels, positions
    return x, labels


def longrange_dataset(
    spec: SyntheticLongRangeSpec | None = None,
    seed: int = 0,
    train: int = 5000,
    test: int = 1000,
) -> Dataset:
    spec = spec or SyntheticLongRangeSpec()
    # test split uses a disjoint stream derived from the same seed
    x_tr, y_tr = gen_longrange(spec, seed, train)
    x_te, y_te = gen_longrange(spec, seed + 1_000_003, test)
    return Dataset(x_tr, y_tr, x_te, y_te, name="synthetic", classes=2)


# ---------------------------------------------------------------------------
# CIFAR-10 binary


def read_cifar_records(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray]:
    """Raw (uint8 images (n, 32, 32, 3), labels) from one CIFAR-10 .bin file."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR_RECORD:
        raise ValueError(f"{path}: truncated record ({raw.size} bytes is not a multiple of {CIFAR_RECORD})")
    rec = raw.reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise ValueError(f"{path}: record {bad} has label {labels[bad]} > 9")
    # channel-planar R, G, B, each row-major 32x32 -> channel-last
    images = rec[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE).transpose(0, 2, 3, 1)
    return np.ascontiguousarray(images), labels


def write_cifar_records(path: str | os.PathLike, images: np.ndarray, labels: np.ndarray) -> None:
    """Inverse of ``read_cifar_records``; used to build fixtures."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    planar = images.transpose(0, 3, 1, 2).reshape(images.shape[0], -1)
    np.concatenate([labels, planar], axis=1).tofile(path)


def _gather(paths) -> tuple[np.ndarray, np.ndarray]:
    parts = [read_cifar_records(p) for p in paths]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def load_cifar10(path: str | os.PathLike, subtract_mean: bool = True) -> Dataset:
    """Load the binary CIFAR-10 release from a directory.

    Pixels are scaled to [0, 1]; the per-pixel, per-channel mean image of
    the training split is subtracted from both splits.
    """
    path = os.fspath(path)
    if not os.path.isdir(path):
        raise FileNotFoundError(f"data-dir {path!r} does not exist")
    train_files = [os.path.join(path, f) for f in CIFAR_TRAIN_FILES if os.path.exists(os.path.join(path, f))]
    test_file = os.path.join(path, CIFAR_TEST_FILE)
    if not train_files or not os.path.exists(test_file):
        raise FileNotFoundError(f"{path!r} lacks data_batch_*.bin / {CIFAR_TEST_FILE}")
    xi, y_train = _gather(train_files)
    xt, y_test = read_cifar_records(test_file)
    x_train = xi.astype(np.float64) / 255.0
    x_test = xt.astype(np.float64) / 255.0
    if subtract_mean:
        mean_image = x_train.mean(axis=0)
        x_train = x_train - mean_image
        x_test = x_test - mean_image
    return Dataset(x_train, y_train, x_test, y_test, name="cifar10", classes=10)
