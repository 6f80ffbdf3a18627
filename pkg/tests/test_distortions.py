import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daiqa.distortions import (
    KINDS,
    LEVEL_RANGES,
    DistortionSpec,
    apply_distortion,
    jpeg_bytes,
)
from daiqa.errors import ConfigError, DataError


class TestDistortionSpec:
    def test_valid_kinds_accepted(self):
        for kind in KINDS:
            lo, hi = LEVEL_RANGES[kind]
            DistortionSpec(0, kind, lo)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError, match="unknown distortion kind"):
            DistortionSpec(0, "salt_pepper", 0.1)

    def test_negative_domain_id_rejected(self):
        with pytest.raises(ConfigError, match="domain_id"):
            DistortionSpec(-1, "jpeg", 50)

    def test_level_out_of_range_rejected(self):
        with pytest.raises(ConfigError, match="outside allowed range"):
            DistortionSpec(0, "jpeg", 0)
        with pytest.raises(ConfigError, match="outside allowed range"):
            DistortionSpec(0, "white_noise", 1.5)

    def test_downsample_factor_must_be_integer(self):
        with pytest.raises(ConfigError, match="integer factor"):
            DistortionSpec(0, "downsample", 2.5)
        DistortionSpec(0, "downsample", 2.0)

    def test_frozen(self):
        spec = DistortionSpec(0, "jpeg", 50)
        with pytest.raises(AttributeError):
            spec.level = 10


class TestApplyDistortion:
    def test_identity_is_exact(self, textured_image):
        out = apply_distortion(textured_image, DistortionSpec(0, "identity", 0.0))
        np.testing.assert_array_equal(out, textured_image)

    def test_zero_sigma_noise_is_noop(self, textured_image):
        out = apply_distortion(textured_image, DistortionSpec(0, "white_noise", 0.0))
        np.testing.assert_array_equal(out, textured_image)

    def test_noise_determinism_and_seed_sensitivity(self, textured_image):
        spec = DistortionSpec(0, "white_noise", 0.1)
        a = apply_distortion(textured_image, spec, rng_seed=5)
        b = apply_distortion(textured_image, spec, rng_seed=5)
        c = apply_distortion(textured_image, spec, rng_seed=6)
        np.testing.assert_array_equal(a, b)
        assert np.any(a != c)

    def test_noise_magnitude_matches_level(self):
        img = np.full((128, 128, 3), 0.5)
        out = apply_distortion(img, DistortionSpec(0, "white_noise", 0.05), rng_seed=1)
        measured = np.std(out - img)
        assert measured == pytest.approx(0.05, rel=0.05)

    def test_blur_preserves_mean(self, textured_image):
        out = apply_distortion(textured_image, DistortionSpec(0, "gaussian_blur", 2.0))
        assert out.mean() == pytest.approx(textured_image.mean(), abs=1e-3)

    def test_blur_reduces_variance(self, textured_image):
        out = apply_distortion(textured_image, DistortionSpec(0, "gaussian_blur", 2.0))
        assert out.var() < textured_image.var()

    def test_stronger_blur_smoother(self, textured_image):
        mild = apply_distortion(textured_image, DistortionSpec(0, "gaussian_blur", 0.5))
        heavy = apply_distortion(textured_image, DistortionSpec(0, "gaussian_blur", 4.0))
        assert heavy.var() < mild.var()

    def test_jpeg_quality_ordering(self, textured_image):
        hi = apply_distortion(textured_image, DistortionSpec(0, "jpeg", 90))
        lo = apply_distortion(textured_image, DistortionSpec(0, "jpeg", 10))
        err_hi = np.mean((hi - textured_image) ** 2)
        err_lo = np.mean((lo - textured_image) ** 2)
        assert err_hi < err_lo

    def test_jp2k_like_top_quality_near_lossless(self, textured_image):
        out = apply_distortion(textured_image, DistortionSpec(0, "jp2k_like", 100))
        np.testing.assert_allclose(out, textured_image, atol=1e-9)

    def test_jp2k_like_quality_ordering(self, textured_image):
        hi = apply_distortion(textured_image, DistortionSpec(0, "jp2k_like", 80))
        lo = apply_distortion(textured_image, DistortionSpec(0, "jp2k_like", 10))
        assert np.mean((hi - textured_image) ** 2) < np.mean((lo - textured_image) ** 2)

    def test_jp2k_like_handles_non_multiple_dims(self):
        img = np.random.default_rng(1).uniform(0, 1, (50, 46, 3))
        out = apply_distortion(img, DistortionSpec(0, "jp2k_like", 30))
        assert out.shape == img.shape

    def test_downsample_removes_detail(self, textured_image):
        out = apply_distortion(textured_image, DistortionSpec(0, "downsample", 4.0))
        assert out.shape == textured_image.shape
        assert out.var() < textured_image.var()

    def test_downsample_factor_one_is_noop(self, textured_image):
        out = apply_distortion(textured_image, DistortionSpec(0, "downsample", 1.0))
        np.testing.assert_array_equal(out, textured_image)

    def test_rejects_bad_image(self):
        with pytest.raises(DataError):
            apply_distortion(np.ones((8, 8)), DistortionSpec(0, "jpeg", 50))
        with pytest.raises(DataError):
            apply_distortion(np.full((8, 8, 3), 2.0), DistortionSpec(0, "jpeg", 50))

    @settings(max_examples=30, deadline=None)
    @given(
        kind=st.sampled_from(["gaussian_blur", "white_noise", "jpeg", "jp2k_like"]),
        frac=st.floats(0.01, 0.99),
        seed=st.integers(0, 2**31 - 1),
    )
    def test_output_always_in_range(self, kind, frac, seed):
        lo, hi = LEVEL_RANGES[kind]
        level = lo + frac * (hi - lo)
        if kind in ("jpeg", "jp2k_like"):
            level = max(level, 1.0)
        img = np.random.default_rng(seed).uniform(0, 1, (32, 32, 3))
        out = apply_distortion(img, DistortionSpec(0, kind, level), rng_seed=seed)
        assert out.shape == img.shape
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert np.all(np.isfinite(out))


def test_jpeg_bytes_is_decodable_jpeg(textured_image):
    blob = jpeg_bytes(textured_image, 60)
    assert blob[:2] == b"\xff\xd8"  # JPEG SOI marker
    import io

    from PIL import Image

    dec = Image.open(io.BytesIO(blob))
    assert dec.size == (64, 64)
