"""Input checks for the estimator layer: image batches and label arrays."""

from __future__ import annotations

import numpy as np


def check_images(X, input_shape: tuple[int, int, int] | None = None) -> np.ndarray:
    """Validate a batch of images: 4-d float array with values in [0, 1]."""
    X = np.asarray(X)
    if X.ndim == 3 and input_shape is not None and input_shape[2] == 1 \
            and X.shape[1:] == input_shape[:2]:
        X = X[..., None]
    if X.ndim != 4:
        raise ValueError(
            f"expected images of shape (n, H, W, C), got array of shape {X.shape}")
    if input_shape is not None and tuple(X.shape[1:]) != tuple(input_shape):
        raise ValueError(
            f"expected per-sample shape {tuple(input_shape)}, got {X.shape[1:]}")
    X = X.astype(np.float32, copy=False)
    if X.size and (X.min() < 0.0 or X.max() > 1.0):
        raise ValueError("pixel values must lie in [0, 1]")
    return X


def check_class_labels(y, n_samples: int) -> np.ndarray:
    """Validate integer class labels (or one-hot rows) for ``n_samples``."""
    y = np.asarray(y)
    if y.ndim == 2:
        y = y.argmax(axis=1)
    if y.ndim != 1 or len(y) != n_samples:
        raise ValueError(
            f"expected {n_samples} labels, got array of shape {np.shape(y)}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.array_equal(y, y.astype(np.int64)):
            raise ValueError("class labels must be integers")
        y = y.astype(np.int64)
    return y.astype(np.int64)


def check_probability_rows(p, n_classes: int, atol: float = 1e-5) -> np.ndarray:
    p = np.asarray(p, dtype=np.float32)
    if p.ndim != 2 or p.shape[1] != n_classes:
        raise ValueError(f"expected (n, {n_classes}) probability rows, got {p.shape}")
    if not np.allclose(p.sum(axis=1), 1.0, atol=atol):
        raise ValueError("probability rows must sum to 1")
    return p
