"""Input validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np


def check_image_array(X, input_size: int = 128) -> np.ndarray:
    """Coerce to an (N, H, W) image stack.

    Accepts a single (H, W) image or an (N, H, W) stack, either raw uint8
    gray levels or floats already normalized to [0, 1]; content must fit
    the network canvas.
    """
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"expected (N, H, W) images, got shape {X.shape}")
    if X.shape[1] > input_size or X.shape[2] > input_size:
        raise ValueError(f"images {X.shape[1]}x{X.shape[2]} exceed the {input_size} canvas")
    if np.issubdtype(X.dtype, np.floating):
        if X.size and (X.min() < 0.0 or X.max() > 1.0):
            raise ValueError("float images must be normalized to [0, 1]")
    elif X.dtype != np.uint8:
        raise ValueError(f"images must be uint8 gray levels or [0, 1] floats, got {X.dtype}")
    return X


def check_label_array(y, num_classes: int, input_size: int = 128) -> np.ndarray:
    """Coerce to an (N, H, W) integer label stack with values < num_classes."""
    y = np.asarray(y)
    if y.ndim == 2:
        y = y[None]
    if y.ndim != 3:
        raise ValueError(f"expected (N, H, W) labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ValueError(f"labels must be integers, got {y.dtype}")
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"labels must lie in 0..{num_classes - 1}")
    return y.astype(np.uint8, copy=False)


def check_pair(X, y, num_classes: int, input_size: int = 128) -> tuple[np.ndarray, np.ndarray]:
    X = check_image_array(X, input_size)
    y = check_label_array(y, num_classes, input_size)
    if X.shape != y.shape:
        raise ValueError(f"images {X.shape} and labels {y.shape} disagree")
    return X, y
