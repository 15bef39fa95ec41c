"""Input validation helpers for the estimator and CLI surfaces."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .model import INPUT_SHAPE


def check_image_batch(X) -> np.ndarray:
    """Coerce to a float32 [n, 224, 224, 3] batch with values in [0, 1]."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[1:] != INPUT_SHAPE:
        raise ShapeError(
            f"expected images shaped [n, {INPUT_SHAPE[0]}, {INPUT_SHAPE[1]}, "
            f"{INPUT_SHAPE[2]}], got {list(X.shape)}"
        )
    if X.shape[0] == 0:
        raise ValueError("image batch is empty")
    if not np.isfinite(X).all():
        raise ValueError("images contain non-finite values")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError(
            f"pixel values must lie in [0, 1]; got min {X.min():.4f}, max {X.max():.4f}"
        )
    return X


def check_binary_labels(y, n: int) -> np.ndarray:
    """Coerce to an int array of 0/1 labels of length n."""
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n:
        raise ShapeError(f"expected {n} labels, got array of shape {list(y.shape)}")
    values = np.unique(y)
    if not np.isin(values, [0, 1]).all():
        raise ValueError(f"labels must be 0 or 1, found {values.tolist()}")
    if values.size < 2:
        raise ValueError("need both classes present to fit")
    return y.astype(np.int64)


def check_fitted(estimator, attribute: str = "model_") -> None:
    if not hasattr(estimator, attribute):
        raise RuntimeError(
            f"{type(estimator).__name__} is not fitted yet; call fit(X, y) first"
        )
