"""Patch extraction: edge-aligned grids and seed-deterministic random sampling."""

from __future__ import annotations

import numpy as np

from .errors import DataError


def _axis_starts(extent, patch_size, stride):
    starts = list(range(0, extent - patch_size + 1, stride))
    last = extent - patch_size
    if starts[-1] != last:
        starts.append(last)  # align the final patch to the image edge
    return starts


def grid_coords(h, w, patch_size, stride):
    """Top-left coordinates of a full-coverage grid of patches."""
    if patch_size > min(h, w):
        raise DataError(f"patch_size {patch_size} exceeds image dims ({h}, {w})")
    if stride <= 0:
        raise DataError("stride must be positive")
    return [
        (y, x)
        for y in _axis_starts(h, patch_size, stride)
        for x in _axis_starts(w, patch_size, stride)
    ]


def random_coords(h, w, patch_size, count, seed):
    if patch_size > min(h, w):
        raise DataError(f"patch_size {patch_size} exceeds image dims ({h}, {w})")
    rng = np.random.default_rng(seed)
    ys = rng.integers(0, h - patch_size + 1, size=count)
    xs = rng.integers(0, w - patch_size + 1, size=count)
    return list(zip(ys.tolist(), xs.tolist()))


def sample_patches(img, patch_size, mode="grid", stride=None, count=None, seed=0):
    """Return a list of (patch, (y, x)) fully inside the image.

    mode="grid" tiles with `stride` and aligns the last row/column to the edge;
    mode="random" draws `count` positions deterministically from `seed`.
    """
    img = np.asarray(img)
    h, w = img.shape[:2]
    if mode == "grid":
        if stride is None:
            raise DataError("grid mode requires a stride")
        coords = grid_coords(h, w, patch_size, stride)
    elif mode == "random":
        if count is None:
            raise DataError("random mode requires a count")
        coords = random_coords(h, w, patch_size, count, seed)
    else:
        raise DataError(f"unknown patch mode {mode!r}")
    return [(img[y : y + patch_size, x : x + patch_size], (y, x)) for y, x in coords]
