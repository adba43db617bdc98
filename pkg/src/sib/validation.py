"""Input validation helpers used at public API boundaries.

All estimator-facing entry points funnel through these so that error
messages stay consistent and the finiteness/range contracts are enforced
in one place.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, ValidationError


def check_matrix(x, name: str = "X", *, dtype=None, copy: bool = False) -> np.ndarray:
    """Coerce to a 2-D, C-contiguous, finite float array.

    1-D input is rejected rather than reshaped: callers decide whether a
    vector means one row or one column.
    """
    arr = np.asarray(x)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got ndim={arr.ndim}")
    if arr.size == 0:
        raise DimensionError(f"{name} must be non-empty, got shape {arr.shape}")
    if dtype is not None and arr.dtype != dtype:
        arr = arr.astype(dtype)
    elif not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    arr = np.ascontiguousarray(arr)
    if copy and arr is x:
        arr = arr.copy()
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def check_unit_range(x: np.ndarray, name: str = "X") -> np.ndarray:
    """Require every entry in [0, 1]; loaders and the oracle reject, never clamp."""
    lo = float(x.min())
    hi = float(x.max())
    if lo < 0.0 or hi > 1.0:
        raise ValidationError(
            f"{name} entries must lie in [0, 1], got range [{lo:.6g}, {hi:.6g}]"
        )
    return x


def check_probability_rows(y: np.ndarray, name: str = "targets", tol: float = 1e-6) -> np.ndarray:
    """Require each row to be a probability vector (sums to 1 within tol)."""
    sums = y.sum(axis=1, dtype=np.float64)
    bad = np.abs(sums - 1.0) > tol
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise ValidationError(
            f"{name} row {idx} sums to {sums[idx]:.8f}, expected 1 within {tol:g}"
        )
    return y


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "arrays") -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what} shapes differ: {a.shape} vs {b.shape}")


def check_labels(y, n_classes: int | None = None, name: str = "y") -> np.ndarray:
    """Coerce to a 1-D int64 label vector, optionally bounded by n_classes."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got ndim={arr.ndim}")
    if not np.issubdtype(arr.dtype, np.integer):
        rounded = np.rint(arr)
        if not np.allclose(arr, rounded):
            raise ValidationError(f"{name} must contain integer class labels")
        arr = rounded
    arr = arr.astype(np.int64)
    if arr.size and (n_classes is not None):
        lo, hi = int(arr.min()), int(arr.max())
        if lo < 0 or hi >= n_classes:
            raise ValidationError(
                f"{name} labels must lie in [0, {n_classes}), got [{lo}, {hi}]"
            )
    elif arr.size and int(arr.min()) < 0:
        raise ValidationError(f"{name} labels must be non-negative")
    return arr
