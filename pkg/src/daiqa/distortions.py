"""Degradation domains and the per-kind pixel operations that realize them.

All operations work on HxWx3 float images in [0, 1], are pure, and are
deterministic given (image, spec, rng_seed).
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ConfigError
from .validation import check_image

KINDS = ("gaussian_blur", "white_noise", "jpeg", "jp2k_like", "downsample", "identity")

# Documented level ranges per kind. Noise sigma is in pixel-intensity units,
# blur sigma in pixels, jpeg/jp2k_like a quality factor, downsample an integer factor.
LEVEL_RANGES = {
    "gaussian_blur": (0.0, 16.0),
    "white_noise": (0.0, 1.0),
    "jpeg": (1.0, 100.0),
    "jp2k_like": (1.0, 100.0),
    "downsample": (1.0, 64.0),
    "identity": (0.0, 0.0),
}


@dataclass(frozen=True)
class DistortionSpec:
    """One degradation domain: distortion kind, level, and integer domain label."""

    domain_id: int
    kind: str
    level: float

    def __post_init__(self):
        if self.domain_id < 0:
            raise ConfigError(f"domain_id must be >= 0, got {self.domain_id}")
        if self.kind not in KINDS:
            raise ConfigError(f"unknown distortion kind {self.kind!r}")
        lo, hi = LEVEL_RANGES[self.kind]
        if not (lo <= self.level <= hi):
            raise ConfigError(
                f"{self.kind} level {self.level} outside allowed range [{lo}, {hi}]"
            )
        if self.kind == "downsample" and int(self.level) != self.level:
            raise ConfigError("downsample level must be an integer factor")


def _blur(img, sigma):
    if sigma == 0:
        return img.copy()
    # Wrap mode keeps the (normalized) kernel mean-preserving on the torus.
    out = np.empty_like(img)
    for c in range(3):
        out[:, :, c] = ndimage.gaussian_filter(img[:, :, c], sigma=sigma, mode="wrap")
    return out


def _white_noise(img, sigma, rng_seed):
    rng = np.random.default_rng(rng_seed)
    return img + rng.normal(0.0, sigma, size=img.shape)


def _jpeg(img, quality):
    pil = Image.fromarray(np.round(img * 255.0).astype(np.uint8), mode="RGB")
    buf = io.BytesIO()
    pil.save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    dec = np.asarray(Image.open(buf).convert("RGB"), dtype=np.float64) / 255.0
    return dec


def jpeg_bytes(img, quality):
    """The actual compressed JPEG stream for a [0,1] image (emitted alongside PNGs)."""
    pil = Image.fromarray(np.round(np.clip(img, 0, 1) * 255.0).astype(np.uint8), "RGB")
    buf = io.BytesIO()
    pil.save(buf, format="JPEG", quality=int(quality))
    return buf.getvalue()


def _haar_fwd(x):
    a = x[0::2, 0::2]
    b = x[0::2, 1::2]
    c = x[1::2, 0::2]
    d = x[1::2, 1::2]
    ll = (a + b + c + d) / 2.0
    lh = (a - b + c - d) / 2.0
    hl = (a + b - c - d) / 2.0
    hh = (a - b - c + d) / 2.0
    return ll, lh, hl, hh


def _haar_inv(ll, lh, hl, hh):
    a = (ll + lh + hl + hh) / 2.0
    b = (ll - lh + hl - hh) / 2.0
    c = (ll + lh - hl - hh) / 2.0
    d = (ll - lh - hl + hh) / 2.0
    h, w = ll.shape
    out = np.empty((2 * h, 2 * w), dtype=ll.dtype)
    out[0::2, 0::2] = a
    out[0::2, 1::2] = b
    out[1::2, 0::2] = c
    out[1::2, 1::2] = d
    return out


def _jp2k_like(img, quality, levels=3):
    """Wavelet-domain coefficient quantization: a codec-free JP2K stand-in.

    A multi-level orthonormal Haar transform is applied per channel and the
    detail bands are uniformly quantized with a step that grows as quality
    drops, reproducing the characteristic smearing/ringing.
    """
    step = 0.6 * ((100.0 - quality) / 100.0) ** 2
    h, w, _ = img.shape
    mult = 2 ** levels
    ph = (-h) % mult
    pw = (-w) % mult
    padded = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="reflect") if (ph or pw) else img

    def quant(band):
        if step == 0:
            return band
        return np.round(band / step) * step

    out = np.empty_like(padded)
    for ch in range(3):
        stack = []
        ll = padded[:, :, ch]
        for _ in range(levels):
            ll, lh, hl, hh = _haar_fwd(ll)
            stack.append((quant(lh), quant(hl), quant(hh)))
        for lh, hl, hh in reversed(stack):
            ll = _haar_inv(ll, lh, hl, hh)
        out[:, :, ch] = ll
    return out[:h, :w, :]


def _downsample(img, factor):
    k = int(factor)
    if k == 1:
        return img.copy()
    h, w, _ = img.shape
    pil = Image.fromarray(np.round(img * 255.0).astype(np.uint8), "RGB")
    small = pil.resize((max(1, w // k), max(1, h // k)), Image.BILINEAR)
    back = small.resize((w, h), Image.BICUBIC)
    return np.asarray(back, dtype=np.float64) / 255.0


def apply_distortion(img, spec: DistortionSpec, rng_seed: int = 0):
    """Apply one degradation domain to an image; output clipped to [0, 1].

    identity is an exact fixed point; white_noise with sigma 0 is a no-op.
    """
    img = check_image(img)
    if spec.kind == "identity":
        return img.copy()
    if spec.kind == "gaussian_blur":
        out = _blur(img, spec.level)
    elif spec.kind == "white_noise":
        if spec.level == 0:
            return img.copy()
        out = _white_noise(img, spec.level, rng_seed)
    elif spec.kind == "jpeg":
        out = _jpeg(img, spec.level)
    elif spec.kind == "jp2k_like":
        out = _jp2k_like(img, spec.level)
    elif spec.kind == "downsample":
        out = _downsample(img, spec.level)
    else:  # pragma: no cover - kinds validated in DistortionSpec
        raise ConfigError(f"unknown kind {spec.kind}")
    return np.clip(out, 0.0, 1.0)
