"""Corpus loading, preprocessing, deterministic splits, and batch scheduling.

The corpus is a set of grayscale chromosome images (raw resolution 94x93,
gray levels 0-255) paired with label maps whose classes are:

    0 background, 1 first chromosome, 2 second chromosome, 3 overlap.

Images are padded to a 128x128 canvas (pad value 255 -> 1.0 after
normalization, matching the white background) and divided by 255 before
entering the network; label maps are padded with 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import h5py
import numpy as np

RAW_HEIGHT = 94
RAW_WIDTH = 93
CANVAS_SIZE = 128
NUM_CLASSES = 4
IMAGE_PAD_VALUE = 255
LABEL_PAD_VALUE = 0


class DatasetFormatError(ValueError):
    """Raised when a corpus container cannot be interpreted."""


# ---------------------------------------------------------------------------
# Portable PRNG for splits and shuffles.
#
# The shuffle must be byte-identical across platforms and library versions,
# so it is pinned to an explicit generator instead of numpy's:
# xorshift64* (Vigna 2016) seeded through one splitmix64 step, driving an
# unbiased Fisher-Yates shuffle.
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class XorShift64Star:
    """xorshift64* stream; state seeded via splitmix64 (never zero)."""

    def __init__(self, seed: int):
        self._state = _splitmix64(seed & _MASK64) or 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self._state
        x ^= (x >> 12)
        x = (x ^ (x << 25)) & _MASK64
        x ^= (x >> 27)
        self._state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def randbelow(self, n: int) -> int:
        # rejection sampling keeps the draw unbiased
        limit = _MASK64 + 1 - ((_MASK64 + 1) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n


def permutation(n: int, seed: int) -> np.ndarray:
    """Fisher-Yates permutation of range(n) under the pinned PRNG."""
    idx = np.arange(n, dtype=np.int64)
    rng = XorShift64Star(seed)
    for i in range(n - 1, 0, -1):
        j = rng.randbelow(i + 1)
        idx[i], idx[j] = idx[j], idx[i]
    return idx


def _epoch_seed(seed: int, epoch: int) -> int:
    return _splitmix64(_splitmix64(seed) + epoch + 1)


# ---------------------------------------------------------------------------
# Corpus containers
# ---------------------------------------------------------------------------


@dataclass
class Corpus:
    """Raw samples as stacked arrays: images and labels are (N, H, W) uint8."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.images.shape != self.labels.shape:
            raise DatasetFormatError(
                f"images {self.images.shape} and labels {self.labels.shape} differ"
            )
        if self.images.ndim != 3:
            raise DatasetFormatError(f"expected (N, H, W) arrays, got {self.images.shape}")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def height(self) -> int:
        return self.images.shape[1]

    @property
    def width(self) -> int:
        return self.images.shape[2]


@dataclass
class DatasetSplit:
    train_indices: np.ndarray
    test_indices: np.ndarray
    ratio: float
    seed: int
    overlap_test_indices: np.ndarray | None = None

    def to_manifest(self) -> dict:
        n = len(self.train_indices) + len(self.test_indices)
        manifest = {
            "n": n,
            "ratio": self.ratio,
            "seed": self.seed,
            "n_train": len(self.train_indices),
            "n_test": len(self.test_indices),
            "train_indices": [int(i) for i in self.train_indices],
            "test_indices": [int(i) for i in self.test_indices],
        }
        if self.overlap_test_indices is not None:
            manifest["n_overlap_test"] = len(self.overlap_test_indices)
            manifest["overlap_test_indices"] = [int(i) for i in self.overlap_test_indices]
        return manifest

    @classmethod
    def from_manifest(cls, manifest: dict) -> "DatasetSplit":
        overlap = manifest.get("overlap_test_indices")
        return cls(
            train_indices=np.asarray(manifest["train_indices"], dtype=np.int64),
            test_indices=np.asarray(manifest["test_indices"], dtype=np.int64),
            ratio=manifest["ratio"],
            seed=manifest["seed"],
            overlap_test_indices=None if overlap is None else np.asarray(overlap, dtype=np.int64),
        )


@dataclass
class BatchSpec:
    batch_size: int = 64
    seed: int = 123
    drop_last: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _validate_labels(labels: np.ndarray, num_classes: int = NUM_CLASSES) -> None:
    if labels.size == 0:
        return
    bad = np.nonzero((labels >= num_classes).reshape(labels.shape[0], -1).any(axis=1))[0]
    if bad.size:
        sample = int(bad[0])
        offending = int(labels[sample].max())
        raise DatasetFormatError(
            f"sample {sample} has label value {offending}, outside 0..{num_classes - 1}"
        )


def _find_published_array(handle: h5py.File) -> str | None:
    """Locate the single 4-D (N, H, W, 2) array of the published container."""
    hits: list[str] = []

    def visit(name, obj):
        if isinstance(obj, h5py.Dataset) and obj.ndim == 4 and obj.shape[-1] == 2:
            hits.append(name)

    handle.visititems(visit)
    return hits[0] if len(hits) == 1 else None


def load_dataset(
    path: str | Path,
    layout: str = "auto",
    images_key: str | None = None,
    labels_key: str | None = None,
) -> Corpus:
    """Read a corpus container.

    ``layout`` is "canonical" (datasets ``images`` and ``labels``),
    "published" (a single (N, H, W, 2) array: slice 0 image, slice 1
    labels), or "auto" to detect between the two. ``images_key`` /
    ``labels_key`` override detection when a container uses other names.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    if layout not in ("auto", "canonical", "published"):
        raise ValueError(f"unknown layout {layout!r}")

    with h5py.File(path, "r") as handle:
        if images_key is not None and labels_key is not None:
            images = np.asarray(handle[images_key])
            labels = np.asarray(handle[labels_key])
        elif layout in ("auto", "canonical") and "images" in handle and "labels" in handle:
            images = np.asarray(handle["images"])
            labels = np.asarray(handle["labels"])
        elif layout in ("auto", "published"):
            name = _find_published_array(handle)
            if images_key is not None and labels_key is None:
                name = images_key
            if name is None:
                raise DatasetFormatError(
                    f"could not locate corpus arrays in {path}; pass --layout and "
                    "--images-key/--labels-key naming the internal datasets"
                )
            stacked = np.asarray(handle[name])
            images = stacked[..., 0]
            labels = stacked[..., 1]
        else:
            raise DatasetFormatError(
                f"{path} is not a canonical container (no 'images'/'labels' datasets)"
            )

    images = np.ascontiguousarray(images, dtype=np.uint8)
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    corpus = Corpus(images=images, labels=labels)
    _validate_labels(corpus.labels)
    return corpus


def save_canonical(path: str | Path, corpus: Corpus) -> None:
    """Write the canonical container: images/labels datasets plus size attrs."""
    with h5py.File(path, "w") as handle:
        handle.create_dataset("images", data=corpus.images, compression="gzip")
        handle.create_dataset("labels", data=corpus.labels, compression="gzip")
        handle.attrs["n"] = len(corpus)
        handle.attrs["height"] = corpus.height
        handle.attrs["width"] = corpus.width
        handle.attrs["classes"] = NUM_CLASSES


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------


def pad_offsets(height: int, width: int, size: int = CANVAS_SIZE) -> tuple[int, int]:
    """Top/left offsets that center (height, width) content in the canvas."""
    if height > size or width > size:
        raise ValueError(f"content {height}x{width} does not fit a {size}x{size} canvas")
    return (size - height) // 2, (size - width) // 2


def prepare_sample(
    image: np.ndarray, label: np.ndarray | None = None, size: int = CANVAS_SIZE
) -> tuple[np.ndarray, np.ndarray | None]:
    """Center one raw sample in the canvas and normalize the image to [0, 1]."""
    image = np.asarray(image)
    h, w = image.shape
    r0, c0 = pad_offsets(h, w, size)
    canvas = np.full((size, size), 1.0, dtype=np.float32)
    canvas[r0 : r0 + h, c0 : c0 + w] = image.astype(np.float32) / np.float32(255.0)
    if label is None:
        return canvas, None
    label = np.asarray(label)
    if label.shape != image.shape:
        raise ValueError(f"label shape {label.shape} != image shape {image.shape}")
    label_canvas = np.full((size, size), LABEL_PAD_VALUE, dtype=np.uint8)
    label_canvas[r0 : r0 + h, c0 : c0 + w] = label
    return canvas, label_canvas


def prepare_batch(
    images: np.ndarray, labels: np.ndarray | None = None, size: int = CANVAS_SIZE
) -> tuple[np.ndarray, np.ndarray | None]:
    """Vectorized prepare_sample over (N, H, W) stacks."""
    n, h, w = images.shape
    r0, c0 = pad_offsets(h, w, size)
    out = np.full((n, size, size), 1.0, dtype=np.float32)
    out[:, r0 : r0 + h, c0 : c0 + w] = images.astype(np.float32) / np.float32(255.0)
    if labels is None:
        return out, None
    lab = np.full((n, size, size), LABEL_PAD_VALUE, dtype=np.uint8)
    lab[:, r0 : r0 + h, c0 : c0 + w] = labels
    return out, lab


def crop_canvas(maps: np.ndarray, height: int, width: int, size: int = CANVAS_SIZE) -> np.ndarray:
    """Inverse of the centering pad: crop trailing spatial dims back to (height, width)."""
    r0, c0 = pad_offsets(height, width, size)
    return maps[..., r0 : r0 + height, c0 : c0 + width]


def one_hot(labels: np.ndarray, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Indicator encoding: channel c is 1 where label == c.

    (H, W) input gives (C, H, W); (N, H, W) gives (N, C, H, W).
    """
    labels = np.asarray(labels)
    if labels.max(initial=0) >= num_classes:
        raise ValueError(f"label {int(labels.max())} >= class count {num_classes}")
    eye = np.eye(num_classes, dtype=np.float32)
    encoded = eye[labels.astype(np.int64)]  # (..., H, W, C)
    return np.moveaxis(encoded, -1, -3)


# ---------------------------------------------------------------------------
# Splits and batches
# ---------------------------------------------------------------------------


def split_dataset(n: int, ratio: float = 0.8, seed: int = 123) -> DatasetSplit:
    """Deterministic train/test split; train side takes floor(n * ratio)."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    perm = permutation(n, seed)
    n_train = int(np.floor(n * ratio + 1e-9))
    train = np.sort(perm[:n_train])
    test = np.sort(perm[n_train:])
    return DatasetSplit(train_indices=train, test_indices=test, ratio=ratio, seed=seed)


def filter_overlap(split: DatasetSplit, labels: np.ndarray) -> np.ndarray:
    """Test indices whose ground truth contains at least one overlap pixel."""
    keep = [
        int(i)
        for i in split.test_indices
        if (labels[int(i)] == NUM_CLASSES - 1).any()
    ]
    return np.asarray(keep, dtype=np.int64)


def batches(
    train_indices: np.ndarray, spec: BatchSpec, epoch: int
) -> list[np.ndarray]:
    """Shuffled index batches for one epoch, reproducible from (seed, epoch)."""
    order = permutation(len(train_indices), _epoch_seed(spec.seed, epoch))
    shuffled = np.asarray(train_indices, dtype=np.int64)[order]
    out = [
        shuffled[start : start + spec.batch_size]
        for start in range(0, len(shuffled), spec.batch_size)
    ]
    if spec.drop_last and out and len(out[-1]) < spec.batch_size:
        out.pop()
    return out


def load_split_manifest(path: str | Path) -> DatasetSplit:
    with open(path) as fh:
        return DatasetSplit.from_manifest(json.load(fh))


def save_split_manifest(path: str | Path, split: DatasetSplit) -> None:
    with open(path, "w") as fh:
        json.dump(split.to_manifest(), fh, indent=2, sort_keys=True)
        fh.write("\n")
