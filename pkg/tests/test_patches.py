import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from daiqa.errors import DataError
from daiqa.patches import grid_coords, random_coords, sample_patches


def test_grid_aligns_last_patch_to_edge():
    coords = grid_coords(70, 70, 32, 32)
    ys = sorted({y for y, _ in coords})
    xs = sorted({x for _, x in coords})
    assert ys == [0, 32, 38]
    assert xs == [0, 32, 38]


def test_grid_exact_tiling_has_no_duplicate_edge_patch():
    coords = grid_coords(64, 64, 32, 32)
    assert coords == [(0, 0), (0, 32), (32, 0), (32, 32)]


def test_grid_patch_too_large_rejected():
    with pytest.raises(DataError, match="exceeds image dims"):
        grid_coords(16, 16, 32, 8)


def test_grid_bad_stride_rejected():
    with pytest.raises(DataError, match="stride"):
        grid_coords(64, 64, 32, 0)


def test_random_coords_deterministic():
    a = random_coords(64, 64, 16, 10, seed=4)
    b = random_coords(64, 64, 16, 10, seed=4)
    c = random_coords(64, 64, 16, 10, seed=5)
    assert a == b
    assert a != c
    assert len(a) == 10


def test_sample_patches_returns_views_of_image():
    img = np.arange(64 * 64 * 3, dtype=np.float64).reshape(64, 64, 3) / (64 * 64 * 3)
    patches = sample_patches(img, 32, mode="grid", stride=32)
    assert len(patches) == 4
    for patch, (y, x) in patches:
        assert patch.shape == (32, 32, 3)
        np.testing.assert_array_equal(patch, img[y : y + 32, x : x + 32])


def test_sample_patches_random_mode():
    img = np.zeros((40, 40, 3))
    patches = sample_patches(img, 16, mode="random", count=5, seed=0)
    assert len(patches) == 5


def test_sample_patches_mode_errors():
    img = np.zeros((40, 40, 3))
    with pytest.raises(DataError, match="stride"):
        sample_patches(img, 16, mode="grid")
    with pytest.raises(DataError, match="count"):
        sample_patches(img, 16, mode="random")
    with pytest.raises(DataError, match="unknown patch mode"):
        sample_patches(img, 16, mode="spiral", stride=8)


@settings(max_examples=50, deadline=None)
@given(
    h=st.integers(16, 90),
    w=st.integers(16, 90),
    patch=st.integers(4, 16),
    stride=st.integers(1, 20),
)
def test_grid_covers_every_pixel(h, w, patch, stride):
    assume(stride <= patch)  # full coverage only holds for overlapping grids
    coords = grid_coords(h, w, patch, stride)
    covered = np.zeros((h, w), dtype=bool)
    for y, x in coords:
        assert 0 <= y <= h - patch and 0 <= x <= w - patch
        covered[y : y + patch, x : x + patch] = True
    assert covered.all()
