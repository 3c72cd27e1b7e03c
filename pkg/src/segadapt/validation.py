"""Input validation helpers used at estimator and operation boundaries."""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError


def as_float_array(x, name: str = "array", ndim: int | None = None) -> np.ndarray:
    """Convert to a finite float64 array, optionally enforcing dimensionality."""
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise InvalidInputError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def check_point_set(x, name: str = "points") -> np.ndarray:
    """Validate an (n, dim) sample matrix with n >= 1."""
    arr = as_float_array(x, name=name)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidInputError(f"{name} must be a non-empty (n, dim) matrix, got shape {arr.shape}")
    return arr


def check_images(x, channels: int | None = None, name: str = "images") -> np.ndarray:
    """Validate an (n, width, height, channels) image batch."""
    arr = as_float_array(x, name=name, ndim=4)
    if channels is not None and arr.shape[3] != channels:
        raise InvalidInputError(f"{name} has {arr.shape[3]} channels, expected {channels}")
    return arr


def check_label_maps(y, n_classes: int, ignore_value: int = 255, name: str = "labels") -> np.ndarray:
    """Validate integer label maps with entries in [0, n_classes) or the ignore value."""
    arr = np.asarray(y)
    if not np.issubdtype(arr.dtype, np.integer):
        flt = np.asarray(y, dtype=np.float64)
        if not np.all(flt == np.round(flt)):
            raise InvalidInputError(f"{name} must be integer-valued")
        arr = flt.astype(np.int64)
    else:
        arr = arr.astype(np.int64)
    valid = (arr == ignore_value) | ((arr >= 0) & (arr < n_classes))
    if not np.all(valid):
        bad = arr[~valid].ravel()[0]
        raise InvalidInputError(f"{name} contains out-of-range label {bad} for {n_classes} classes")
    return arr


def check_positive(value, name: str):
    if not value > 0:
        raise InvalidInputError(f"{name} must be positive, got {value!r}")
    return value


def check_unit_interval(value, name: str, *, closed_right: bool = False):
    ok = 0.0 <= value <= 1.0 if closed_right else 0.0 <= value < 1.0
    if not ok:
        upper = "1]" if closed_right else "1)"
        raise InvalidInputError(f"{name} must lie in [0, {upper}, got {value!r}")
    return float(value)


def check_probability_vector(p, name: str = "distribution") -> np.ndarray:
    arr = as_float_array(p, name=name, ndim=1)
    if np.any(arr < 0) or abs(arr.sum() - 1.0) > 1e-9:
        raise InvalidInputError(f"{name} must be non-negative and sum to 1")
    return arr
