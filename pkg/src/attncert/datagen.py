"""Synthetic blob images with pixel-exact ground-truth saliency masks.

Each image is a dim noisy background with one bright rectangle in the left
or right half; the label says which half, alternating so classes stay
balanced.  Blob pixels are strictly brighter than any background pixel,
which keeps mask-based metrics unambiguous.  Everything is a deterministic
function of the seed, and images are generated directly in float32 so a
file round-trip is bit-exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DataError, require
from .tensorio import read_tensor, write_tensor

_BG_LO, _BG_HI = 0.05, 0.35
_BLOB_LO, _BLOB_HI = 0.70, 0.95
_BLOB_JITTER = 0.04


@dataclass(frozen=True)
class Dataset:
    """In-memory dataset: float32 images/masks, int labels, string ids."""

    images: np.ndarray  # (N, H, W) float32
    masks: np.ndarray   # (N, H, W) float32, binary
    labels: np.ndarray  # (N,) int64; 0 = left blob, 1 = right blob
    ids: tuple

    def __len__(self) -> int:
        return self.images.shape[0]


def synthesize(count: int, size: int, seed: int) -> Dataset:
    """Generate ``count`` images of side ``size`` from one seeded stream.

    Labels alternate 0, 1, 0, 1, ... (left, right), so any prefix is
    balanced within one.  Blob height spans a quarter to a half of the
    image; width a similar range capped to fit its half.
    """
    require(count >= 1, "count must be positive")
    require(size >= 8 and size % 2 == 0, "size must be even and at least 8")
    rng = np.random.default_rng(seed)
    half = size // 2
    images = np.empty((count, size, size), dtype=np.float32)
    masks = np.zeros((count, size, size), dtype=np.float32)
    labels = np.empty(count, dtype=np.int64)
    for i in range(count):
        label = i % 2
        bg = rng.uniform(_BG_LO, _BG_HI, (size, size))
        h = int(rng.integers(size // 4, size // 2 + 1))
        w = int(rng.integers(max(2, size // 8), half + 1))
        top = int(rng.integers(0, size - h + 1))
        left = int(rng.integers(0, half - w + 1)) + label * half
        level = rng.uniform(_BLOB_LO, _BLOB_HI)
        blob = level + rng.uniform(-_BLOB_JITTER, _BLOB_JITTER, (h, w))
        img = bg
        img[top:top + h, left:left + w] = blob
        images[i] = img.astype(np.float32)
        masks[i, top:top + h, left:left + w] = 1.0
        labels[i] = label
    ids = tuple(f"img_{i:05d}" for i in range(count))
    return Dataset(images=images, masks=masks, labels=labels, ids=ids)


def write_dataset(directory, dataset: Dataset) -> None:
    """Write images and masks as tensor files plus a manifest.csv index."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "image", "mask", "label"])
        for i in range(len(dataset)):
            img_name = f"{dataset.ids[i]}.fvtn"
            mask_name = f"{dataset.ids[i]}_mask.fvtn"
            write_tensor(d / img_name, dataset.images[i])
            write_tensor(d / mask_name, dataset.masks[i])
            writer.writerow([dataset.ids[i], img_name, mask_name,
                             int(dataset.labels[i])])


def load_dataset(directory) -> Dataset:
    """Read back a dataset directory written by :func:`write_dataset`."""
    d = Path(directory)
    manifest = d / "manifest.csv"
    if not manifest.is_file():
        raise DataError(f"{d}: missing dataset manifest.csv")
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["id", "image", "mask", "label"]:
            raise DataError(f"{manifest}: unexpected manifest columns")
        rows = list(reader)
    if not rows:
        raise DataError(f"{manifest}: empty dataset")
    images, masks, labels, ids = [], [], [], []
    for row in rows:
        try:
            labels.append(int(row["label"]))
        except (ValueError, TypeError):
            raise DataError(f"{manifest}: bad label for {row.get('id')}") \
                from None
        images.append(read_tensor(d / row["image"]))
        masks.append(read_tensor(d / row["mask"]))
        ids.append(row["id"])
    shape0 = images[0].shape
    if any(img.shape != shape0 for img in images):
        raise DataError(f"{d}: images disagree in shape")
    return Dataset(images=np.stack(images), masks=np.stack(masks),
                   labels=np.asarray(labels, dtype=np.int64), ids=tuple(ids))
