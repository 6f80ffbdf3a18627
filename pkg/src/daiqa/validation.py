"""Input validation helpers used by estimators and free functions."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError


def check_image(img, name="img"):
    """Validate an HxWx3 float image with values in [0, 1] and return it as float64.

    Accepts anything array-like. Raises DataError on wrong shape or range.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise DataError(f"{name}: expected HxWx3 array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name}: non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise DataError(
            f"{name}: values must lie in [0, 1], got range "
            f"[{arr.min():.4g}, {arr.max():.4g}]"
        )
    return arr


def check_vector_pair(y, yhat, min_len=2):
    """Validate two equal-length 1-D float vectors."""
    a = np.asarray(y, dtype=np.float64).ravel()
    b = np.asarray(yhat, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DataError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < min_len:
        raise DataError(f"need at least {min_len} samples, got {a.shape[0]}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise DataError("non-finite values in input vectors")
    return a, b


def check_positive(value, name):
    if not value > 0:
        raise ConfigError(f"{name} must be > 0, got {value}")
    return value


def check_divisible(h, w, factor):
    """Require spatial dims divisible by `factor`; error names the required multiple."""
    if h % factor != 0 or w % factor != 0:
        raise DataError(
            f"spatial dims ({h}, {w}) must both be multiples of {factor}"
        )
