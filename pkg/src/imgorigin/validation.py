"""Input validation helpers used at public entry points.

These keep error messages consistent: every shape complaint names both
shapes, every finiteness complaint names the argument. Internal code
paths skip these checks and work on trusted float64 arrays.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeMismatchError

__all__ = [
    "as_float_array",
    "check_finite",
    "check_image",
    "check_same_shape",
    "check_unit_range",
]


def as_float_array(x, name: str = "array") -> np.ndarray:
    """Convert to a float64 ndarray without copying when possible."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    return arr


def check_finite(x: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def check_image(x, image_shape=None, name: str = "image") -> np.ndarray:
    """Validate a (channels, height, width) image and return it as float64."""
    arr = as_float_array(x, name)
    if arr.ndim != 3:
        raise ShapeMismatchError(
            f"{name} must have shape (channels, height, width), got {arr.shape}"
        )
    if image_shape is not None and tuple(arr.shape) != tuple(image_shape):
        raise ShapeMismatchError(
            f"{name} has shape {arr.shape}, expected {tuple(image_shape)}"
        )
    check_finite(arr, name)
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, names=("a", "b")) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(
            f"{names[0]} has shape {a.shape} but {names[1]} has shape {b.shape}"
        )


def check_unit_range(x: np.ndarray, name: str = "image") -> np.ndarray:
    lo, hi = float(np.min(x)), float(np.max(x))
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1], got [{lo:g}, {hi:g}]")
    return x
