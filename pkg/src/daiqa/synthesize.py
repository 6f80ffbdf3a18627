"""Dataset manufacturing: distort pristine images across domains, write manifests.

Also includes a procedural pristine-image generator so desk experiments and
tests do not depend on external photo collections.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from PIL import Image

from .distortions import DistortionSpec, apply_distortion, jpeg_bytes
from .errors import DataError
from .manifest import Manifest, SampleRecord

log = logging.getLogger(__name__)

IMAGE_EXTS = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


def load_image(path):
    """Load an 8-bit image file as an HxWx3 float array in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def save_png(img, path):
    """Quantize a [0, 1] image to 8-bit and write a PNG."""
    arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(path, format="PNG")


def _record_seed(base_seed, image_index, domain_id):
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(image_index, domain_id))
    return int(ss.generate_state(1)[0])


def list_pristine(pristine_dir):
    p = Path(pristine_dir)
    if not p.is_dir():
        raise DataError(f"pristine dir not found: {p}")
    files = sorted(f for f in p.iterdir() if f.suffix.lower() in IMAGE_EXTS)
    if not files:
        raise DataError(f"no decodable images in {p}")
    return files


def build_dataset(pristine_dir, domains, out_dir, seed):
    """Distort every pristine image with every domain and write the manifest.

    One distorted PNG per (pristine, domain) pair plus a copy of each reference.
    Rerunning with the same seed reproduces byte-identical manifests and pixels.
    Unreadable images are skipped with a log message; an empty directory is fatal.
    """
    files = list_pristine(pristine_dir)
    out = Path(out_dir)
    (out / "ref").mkdir(parents=True, exist_ok=True)
    (out / "dist").mkdir(parents=True, exist_ok=True)

    manifest = Manifest(root=str(out), seed=seed, domains=list(domains))
    for idx, f in enumerate(files):
        try:
            img = load_image(f)
        except Exception as e:  # unreadable file: skip, keep building
            log.warning("skipping unreadable image %s: %s", f, e)
            continue
        ref_rel = f"ref/{f.stem}.png"
        save_png(img, out / ref_rel)
        for spec in domains:
            rec_seed = _record_seed(seed, idx, spec.domain_id)
            dist = apply_distortion(img, spec, rng_seed=rec_seed)
            img_rel = f"dist/{f.stem}_d{spec.domain_id}.png"
            save_png(dist, out / img_rel)
            if spec.kind == "jpeg":
                # keep the actual compressed stream next to the decoded PNG
                (out / f"dist/{f.stem}_d{spec.domain_id}.jpg").write_bytes(
                    jpeg_bytes(img, spec.level)
                )
            manifest.records.append(
                SampleRecord(
                    image_path=img_rel,
                    ref_path=ref_rel,
                    domain_id=spec.domain_id,
                    kind=spec.kind,
                    level=spec.level,
                )
            )
    if not manifest.records:
        raise DataError("no readable pristine images; dataset would be empty")
    manifest.save(out / "manifest.jsonl")
    return manifest


def level_schedule(kinds_levels, start_id=0):
    """Expand {kind: [levels]} into one DistortionSpec per (kind, level)."""
    specs = []
    did = start_id
    for kind, levels in kinds_levels.items():
        for lv in levels:
            specs.append(DistortionSpec(did, kind, lv))
            did += 1
    return specs


def _smooth_noise(rng, h, w, scale):
    """Low-frequency field: coarse uniform noise upsampled bilinearly."""
    sh, sw = max(2, h // scale), max(2, w // scale)
    coarse = rng.uniform(0.0, 1.0, (sh, sw))
    yi = np.linspace(0, sh - 1, h)
    xi = np.linspace(0, sw - 1, w)
    tmp = np.stack([np.interp(yi, np.arange(sh), coarse[:, j]) for j in range(sw)], axis=1)
    return np.stack([np.interp(xi, np.arange(sw), tmp[i, :]) for i in range(h)], axis=0)


def generate_pristine_image(size, seed):
    """One procedural 'natural-ish' image: smooth gradients, shapes, fine texture."""
    rng = np.random.default_rng(seed)
    h = w = size
    img = np.zeros((h, w, 3))
    base = _smooth_noise(rng, h, w, scale=rng.integers(4, 9))
    tint = rng.uniform(0.2, 0.8, 3)
    for c in range(3):
        img[:, :, c] = 0.3 + 0.5 * base * tint[c]

    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(rng.integers(4, 9)):
        color = rng.uniform(0.05, 0.95, 3)
        shape = rng.integers(0, 3)
        if shape == 0:  # filled disc
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            r = rng.uniform(size / 12, size / 4)
            mask = ((yy - cy) ** 2 + (xx - cx) ** 2) < r * r
        elif shape == 1:  # rectangle
            y0, x0 = rng.integers(0, h - 4), rng.integers(0, w - 4)
            y1 = rng.integers(y0 + 2, min(h, y0 + h // 2) + 1)
            x1 = rng.integers(x0 + 2, min(w, x0 + w // 2) + 1)
            mask = (yy >= y0) & (yy < y1) & (xx >= x0) & (xx < x1)
        else:  # diagonal band
            a, b = rng.uniform(-1.5, 1.5), rng.uniform(0, h)
            width = rng.uniform(2, size / 8)
            mask = np.abs(yy - (a * xx + b)) < width
        alpha = rng.uniform(0.5, 1.0)
        img[mask] = (1 - alpha) * img[mask] + alpha * color

    # fine texture so blur and compression have something to destroy
    img += rng.normal(0.0, 0.02, (h, w, 1))
    stripes = 0.03 * np.sin(2 * np.pi * (xx * rng.uniform(0.08, 0.25) + rng.uniform(0, 1)))
    img += stripes[:, :, None] * (base[:, :, None] > 0.5)
    return np.clip(img, 0.0, 1.0)


def generate_pristine_dir(out_dir, count, size, seed):
    """Write `count` deterministic procedural pristine PNGs into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        img = generate_pristine_image(size, np.random.SeedSequence([seed, i]).generate_state(1)[0])
        p = out / f"pristine_{i:04d}.png"
        save_png(img, p)
        paths.append(p)
    return paths
