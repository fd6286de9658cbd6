"""Input validation helpers shared by the estimator API and the core modules."""

from __future__ import annotations

import numpy as np


def as_float_matrix(X, name: str = "X") -> np.ndarray:
    """Coerce to a 2-D float32 array and reject non-finite entries.

    Raises ValueError on wrong rank, empty axes, or NaN/Inf.
    """
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be non-empty, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_float_vector(x, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float32).reshape(-1)
    if arr.size < 1:
        raise ValueError(f"{name} must be non-empty")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_same_dim(A: np.ndarray, B: np.ndarray, a_name: str = "X", b_name: str = "C") -> None:
    if A.shape[1] != B.shape[1]:
        raise ValueError(
            f"dimension mismatch: {a_name} has D={A.shape[1]}, {b_name} has D={B.shape[1]}"
        )


def as_label_vector(labels, name: str = "labels") -> np.ndarray:
    """Coerce to a 1-D int array of {0,1}."""
    arr = np.asarray(labels).reshape(-1).astype(np.int64)
    if arr.size < 1:
        raise ValueError(f"{name} must be non-empty")
    bad = np.setdiff1d(np.unique(arr), [0, 1])
    if bad.size:
        raise ValueError(f"{name} must be 0/1, found {bad.tolist()}")
    return arr
