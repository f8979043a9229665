"""Small input-validation helpers used at the public API boundary."""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError


def check_finite(value, name: str) -> None:
    """Raise InvalidInputError if `value` contains NaN or infinity."""
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} must be finite, got {value!r}")


def as_point(p) -> np.ndarray:
    """Coerce a point-like (x, y) into a finite float array of shape (2,)."""
    arr = np.asarray(p, dtype=float)
    if arr.shape != (2,):
        raise InvalidInputError(f"expected a 2-D point, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"point components must be finite, got {arr}")
    return arr


def as_points(X) -> np.ndarray:
    """Coerce point-like input into a finite float array of shape (n, 2)."""
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidInputError(f"expected points of shape (n, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("point coordinates must be finite")
    return arr


def check_extent(extent_x: float, extent_y: float) -> tuple[float, float]:
    X, Y = float(extent_x), float(extent_y)
    if not (np.isfinite(X) and np.isfinite(Y) and X > 0 and Y > 0):
        raise InvalidInputError(f"map extent must be positive and finite, got ({X}, {Y})")
    return X, Y
