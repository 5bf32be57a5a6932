"""Input validation helpers for the estimator API."""
from __future__ import annotations

import numpy as np


class ValidationError(ValueError):
    pass


def check_video(x, index: int | None = None) -> np.ndarray:
    """Validate one video as a (T, 3, H, W) float array with values in [0, 1]."""
    where = f"X[{index}]" if index is not None else "video"
    arr = np.asarray(x)
    if arr.ndim != 4 or arr.shape[1] != 3:
        raise ValidationError(f"{where}: expected shape (T, 3, H, W), got {arr.shape}")
    if arr.shape[0] < 1:
        raise ValidationError(f"{where}: video has no frames")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{where}: non-finite pixel values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValidationError(
            f"{where}: pixel values must lie in [0, 1], got [{arr.min():.3g}, {arr.max():.3g}]")
    return arr.astype(np.float32, copy=False)


def check_videos(X) -> list[np.ndarray]:
    """Validate a sequence of videos; frame counts may differ across videos."""
    if isinstance(X, np.ndarray) and X.ndim == 5:
        X = list(X)
    try:
        items = list(X)
    except TypeError:
        raise ValidationError(f"X must be a sequence of videos, got {type(X).__name__}")
    if not items:
        raise ValidationError("X is empty")
    return [check_video(x, i) for i, x in enumerate(items)]


def check_labels(y, n_samples: int) -> np.ndarray:
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValidationError(f"y must be 1-d, got shape {arr.shape}")
    if arr.shape[0] != n_samples:
        raise ValidationError(f"X has {n_samples} videos but y has {arr.shape[0]} labels")
    if not np.issubdtype(arr.dtype, np.integer):
        if np.issubdtype(arr.dtype, np.floating) and np.all(arr == arr.astype(np.int64)):
            arr = arr.astype(np.int64)
        else:
            raise ValidationError(f"labels must be integers, got dtype {arr.dtype}")
    return arr.astype(np.int64)


def check_fitted(estimator, attribute: str) -> None:
    if not hasattr(estimator, attribute):
        raise ValidationError(
            f"{type(estimator).__name__} is not fitted yet; call fit(X, y) first")
