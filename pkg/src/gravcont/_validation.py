"""Input checks shared by the estimator front end."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length

from .exceptions import ShapeError
from .model import Rectangle


def check_coordinates(X) -> np.ndarray:
    """Coerce observation coordinates to a finite float array of shape (n, 3)."""
    X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True)
    if X.shape[1] != 3:
        raise ShapeError(f"expected coordinates with 3 columns (x1, x2, x3), got {X.shape[1]}")
    return X


def check_coordinates_values(X, y):
    X = check_coordinates(X)
    y = check_array(y, dtype=np.float64, ensure_2d=False, ensure_all_finite=True)
    if y.ndim != 1:
        raise ShapeError(f"expected a 1-d target, got shape {y.shape}")
    check_consistent_length(X, y)
    return X, y


def resolve_extent(extent, X) -> Rectangle:
    """Explicit extent, or the horizontal bounding box of ``X``."""
    if extent is None:
        lo, hi = X[:, :2].min(axis=0), X[:, :2].max(axis=0)
        return Rectangle(float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]))
    if isinstance(extent, Rectangle):
        return extent
    return Rectangle.from_bounds(extent)
