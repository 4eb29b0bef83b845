"""Label-map rendering: the class palette, colorized maps, and pseudo-color
difference images, plus PNG read/write helpers.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image
from PIL.PngImagePlugin import PngInfo

# 0 background (black), 1 first chromosome (red), 2 second chromosome
# (green), 3 overlap (blue)
CLASS_PALETTE: dict[int, tuple[int, int, int]] = {
    0: (0, 0, 0),
    1: (255, 0, 0),
    2: (0, 255, 0),
    3: (0, 0, 255),
}

DIFF_SEMANTICS = (
    "pixels where prediction != ground truth carry the palette color of the "
    "predicted class; matching pixels are black"
)


def palette_array(num_classes: int = 4) -> np.ndarray:
    return np.array([CLASS_PALETTE[c] for c in range(num_classes)], dtype=np.uint8)


def colorize(label_map: np.ndarray) -> np.ndarray:
    """Class map -> (H, W, 3) RGB via the palette."""
    label_map = np.asarray(label_map)
    return palette_array()[label_map]


def difference_image(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Pseudo-color difference map: mismatches tinted by predicted class."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    out = np.zeros((*pred.shape, 3), dtype=np.uint8)
    mismatch = pred != gt
    out[mismatch] = palette_array()[pred[mismatch]]
    return out


def save_rgb_png(path: str | Path, rgb: np.ndarray, metadata: dict[str, str] | None = None) -> None:
    info = PngInfo()
    for key, value in (metadata or {}).items():
        info.add_text(key, value)
    Image.fromarray(rgb, mode="RGB").save(path, pnginfo=info)


def save_label_png(path: str | Path, label_map: np.ndarray) -> None:
    """Lossless label map: 8-bit grayscale PNG holding raw class ids."""
    Image.fromarray(np.asarray(label_map, dtype=np.uint8), mode="L").save(path)


def load_label_map(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path).astype(np.uint8)
    return np.array(Image.open(path).convert("L"), dtype=np.uint8)


def load_gray_image(path: str | Path) -> np.ndarray:
    """8-bit grayscale image as (H, W) uint8."""
    return np.array(Image.open(path).convert("L"), dtype=np.uint8)
