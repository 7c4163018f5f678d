"""Datasets: synthetic class-conditional images, CIFAR binary ingestion,
and deterministic train-time augmentation.

The synthetic generator is the desk-scale workhorse: each class owns a
fixed low-frequency template and samples are noisy copies of it, so the
task is learnable at small model sizes while still needing a few epochs.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

_TEMPLATE_TAG = 11
_NOISE_TAG = 12
_AUG_TAG = 13


@dataclass
class AugmentSpec:
    """Train-time augmentation: zero-pad then random crop, horizontal flip.

    Both transforms are derived from (seed, epoch, sample index) alone, so
    a given sample sees the same crop offset and flip bit no matter which
    batch or process handles it.
    """

    pad: int = 4
    random_crop: bool = False
    horizontal_flip: bool = False
    seed: int = 0

    @property
    def active(self) -> bool:
        return self.random_crop or self.horizontal_flip


@dataclass
class DatasetHandle:
    split: str
    samples: np.ndarray     # (N, 3, H, W) float32 in [0, 1]
    labels: np.ndarray      # (N,) int64
    augment: AugmentSpec
    num_classes: int

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise InputError(f"split must be 'train' or 'test', got {self.split!r}")
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 4 or self.samples.shape[1] != 3:
            raise InputError(
                f"samples must be (N, 3, H, W), got {self.samples.shape}")
        if self.labels.shape != (len(self.samples),):
            raise InputError(
                f"labels shape {self.labels.shape} does not match "
                f"{len(self.samples)} samples")
        if len(self.labels) and not (
                0 <= self.labels.min() and self.labels.max() < self.num_classes):
            raise InputError(
                f"labels must lie in [0, {self.num_classes}), "
                f"got range [{self.labels.min()}, {self.labels.max()}]")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def image_size(self) -> int:
        return self.samples.shape[2]


def _bilinear_upsample(img: np.ndarray, size: int) -> np.ndarray:
    """Resize (C, h, w) to (C, size, size) sampling at pixel centers."""
    _, h, w = img.shape

    def axis_grid(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        lo = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
        hi = np.clip(lo + 1, 0, n_in - 1)
        frac = np.clip(pos - lo, 0.0, 1.0)
        return lo, hi, frac

    y0, y1, fy = axis_grid(h, size)
    x0, x1, fx = axis_grid(w, size)
    fx = fx[None, None, :]
    top = img[:, y0][:, :, x0] * (1 - fx) + img[:, y0][:, :, x1] * fx
    bot = img[:, y1][:, :, x0] * (1 - fx) + img[:, y1][:, :, x1] * fx
    fy = fy[None, :, None]
    return top * (1 - fy) + bot * fy


def make_synthetic(num_classes: int, n_per_class: int, size: int = 16,
                   seed: int = 0, noise: float = 0.25):
    """Class-conditional images: smooth per-class template plus pixel noise.

    Returns (train, test) handles with a disjoint 80/20 per-class split.
    ``noise`` is the Gaussian sigma added on top of templates in [0, 1];
    zero gives a degenerate task solvable by nearest-template matching.
    """
    if size < 8:
        raise InputError(f"size must be >= 8, got {size}")
    if num_classes < 2:
        raise InputError(f"num_classes must be >= 2, got {num_classes}")
    if n_per_class < 2:
        raise InputError(f"n_per_class must be >= 2, got {n_per_class}")
    if noise < 0:
        raise InputError(f"noise must be >= 0, got {noise}")

    rng_t = np.random.default_rng([seed, _TEMPLATE_TAG])
    templates = [_bilinear_upsample(rng_t.uniform(0, 1, size=(3, 4, 4)), size)
                 for _ in range(num_classes)]

    rng_n = np.random.default_rng([seed, _NOISE_TAG])
    n_test = max(1, int(round(0.2 * n_per_class)))
    n_train = n_per_class - n_test
    train_x, train_y, test_x, test_y = [], [], [], []
    for c in range(num_classes):
        block = rng_n.normal(0.0, 1.0, size=(n_per_class, 3, size, size))
        imgs = np.clip(templates[c][None] + noise * block, 0.0, 1.0)
        train_x.append(imgs[:n_train])
        train_y.append(np.full(n_train, c, dtype=np.int64))
        test_x.append(imgs[n_train:])
        test_y.append(np.full(n_test, c, dtype=np.int64))

    train = DatasetHandle("train", np.concatenate(train_x),
                          np.concatenate(train_y),
                          AugmentSpec(seed=seed), num_classes)
    test = DatasetHandle("test", np.concatenate(test_x),
                         np.concatenate(test_y),
                         AugmentSpec(seed=seed), num_classes)
    return train, test


def load_cifar_binary(directory, split: str = "train",
                      classes_subset=None, downscale: int = 1) -> DatasetHandle:
    """Read the public CIFAR binary layout from ``directory``.

    Both variants are recognized by their file names: the 100-class files
    (train.bin/test.bin, coarse+fine label bytes per record) and the
    10-class batches (data_batch_*.bin/test_batch.bin, one label byte).
    The fine label is used. Pixels are scaled to [0, 1]; ``classes_subset``
    keeps only those classes and remaps labels to 0..k-1 in the order
    given; ``downscale`` average-pools by an integer factor.
    """
    if split not in ("train", "test"):
        raise InputError(f"split must be 'train' or 'test', got {split!r}")
    root = Path(directory)
    c100_file = root / ("train.bin" if split == "train" else "test.bin")
    if c100_file.exists():
        files, record, label_at, num_classes = [c100_file], 3074, 1, 100
    else:
        if split == "train":
            files = sorted(root.glob("data_batch_*.bin"))
        else:
            files = [root / "test_batch.bin"]
        record, label_at, num_classes = 3073, 0, 10
    files = [f for f in files if f.exists()]
    if not files:
        raise FileNotFoundError(f"no CIFAR binary files for split {split!r} in {root}")

    images, labels = [], []
    for f in files:
        raw = f.read_bytes()
        if len(raw) % record != 0:
            index = len(raw) // record
            raise FormatError(
                f"{f.name}: truncated record at index {index}",
                offset=index * record)
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record)
        labels.append(arr[:, label_at].astype(np.int64))
        images.append(arr[:, record - 3072:].reshape(-1, 3, 32, 32))

    x = np.concatenate(images).astype(np.float32) / 255.0
    y = np.concatenate(labels)

    if classes_subset is not None:
        subset = [int(c) for c in classes_subset]
        if len(set(subset)) != len(subset):
            raise InputError(f"classes_subset has duplicates: {subset}")
        bad = [c for c in subset if not 0 <= c < num_classes]
        if bad:
            raise InputError(f"classes_subset entries out of range: {bad}")
        mapping = np.full(num_classes, -1, dtype=np.int64)
        for i, c in enumerate(subset):
            mapping[c] = i
        mask = np.isin(y, subset)
        x, y = x[mask], mapping[y[mask]]
        num_classes = len(subset)

    if downscale > 1:
        if 32 % downscale != 0:
            raise InputError(f"downscale must divide 32, got {downscale}")
        n, c, h, w = x.shape
        f = downscale
        x = x.reshape(n, c, h // f, f, w // f, f).mean(axis=(3, 5))

    return DatasetHandle(split, x, y, AugmentSpec(), num_classes)


def augment_batch(handle: DatasetHandle, indices, epoch: int) -> np.ndarray:
    """Return the selected samples with their per-sample transforms applied.

    ``indices`` are positions in the dataset; each position's transform is
    a pure function of (augment seed, epoch, position).
    """
    x = handle.samples[indices]
    spec = handle.augment
    if handle.split != "train" or not spec.active:
        return x
    _, _, height, width = x.shape
    pad = spec.pad
    out = np.empty_like(x)
    for j, idx in enumerate(indices):
        rng = np.random.default_rng([spec.seed, epoch, int(idx), _AUG_TAG])
        img = x[j]
        if spec.random_crop:
            dy, dx = rng.integers(0, 2 * pad + 1, size=2)
            padded = np.zeros((3, height + 2 * pad, width + 2 * pad),
                              dtype=img.dtype)
            padded[:, pad:pad + height, pad:pad + width] = img
            img = padded[:, dy:dy + height, dx:dx + width]
        if spec.horizontal_flip and rng.integers(0, 2) == 1:
            img = img[:, :, ::-1]
        out[j] = img
    return out
