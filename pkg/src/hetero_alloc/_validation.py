"""Small argument-checking helpers shared across modules."""

from __future__ import annotations

import numpy as np


def as_matrix(a, name: str, shape=None, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    if arr.ndim == 1 and shape is not None and len(shape) == 2 and arr.size == 0:
        arr = arr.reshape(shape)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if shape is not None:
        for axis, (got, want) in enumerate(zip(arr.shape, shape)):
            if want is not None and got != want:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape} (axis {axis})")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_vector(a, name: str, size=None) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True).reshape(-1)
    if size is not None and arr.size != size:
        raise ValueError(f"{name} has length {arr.size}, expected {size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_binary(arr: np.ndarray, name: str) -> None:
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must be binary")


def check_nonneg_int(arr: np.ndarray, name: str) -> None:
    if np.any(arr < 0) or np.any(arr != np.round(arr)):
        raise ValueError(f"{name} must hold non-negative integers")


def check_index(i, n: int, name: str) -> int:
    i = int(i)
    if not 0 <= i < n:
        raise IndexError(f"{name} index {i} out of range [0, {n})")
    return i


def check_positive(x, name: str, strict: bool = True) -> float:
    x = float(x)
    if not np.isfinite(x) or (x <= 0 if strict else x < 0):
        raise ValueError(f"{name} must be {'positive' if strict else 'non-negative'}, got {x}")
    return x
