"""Image-space domain fingerprints and latent-space 2-D embeddings.

An image fingerprint is the signed restoration residual, grayscaled and
normalized to zero mean / unit variance. A model fingerprint is the
re-normalized mean of many image fingerprints from one domain. The response of
an image fingerprint to a model fingerprint is their pixel-wise product; its
mean equals their normalized cross-correlation.
"""

from __future__ import annotations

import logging
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import DataError
from .synthesize import load_image

log = logging.getLogger(__name__)

LUMA = np.array([0.299, 0.587, 0.114])
VARIANCE_FLOOR = 1e-12

GRID_MAGIC = b"DFPG"
GRID_VERSION = 1


def to_gray(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img @ LUMA
    return img


def normalize(x, warn=True):
    """Zero-mean unit-variance (population) normalization with a variance floor.

    Degenerate (constant) inputs are flagged with a warning and floored rather
    than propagating NaNs. Idempotent within floating-point error.
    """
    x = np.asarray(x, dtype=np.float64)
    centered = x - x.mean()
    var = centered.var()
    if var < VARIANCE_FLOOR:
        if warn:
            warnings.warn("degenerate (near-constant) fingerprint; variance floored")
        var = VARIANCE_FLOOR
    return centered / np.sqrt(var)


def image_fingerprint(img, restorer):
    """Signed residual img - restored, grayscale, normalized."""
    out = restorer.restore(img)
    residual = to_gray(np.asarray(img, dtype=np.float64) - out.restored)
    return normalize(residual)


def model_fingerprint(domain_id, manifest, restorer, k, seed=0, root=None):
    """Mean of k seed-selected normalized image fingerprints of one domain,
    re-normalized."""
    recs = manifest.subset(domain_id=domain_id)
    if len(recs) < k:
        raise DataError(
            f"domain {domain_id}: need {k} images, only {len(recs)} in manifest"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(recs), size=k, replace=False)
    fps = []
    for i in sorted(chosen):
        img = load_image(manifest.resolve(recs[i], root)[0])
        fps.append(image_fingerprint(img, restorer))
    return normalize(np.mean(fps, axis=0))


def response(f_im, f_mod):
    """(response image, response scalar) of two normalized fingerprints.

    The scalar is the mean of the pixel-wise product, i.e. their normalized
    cross-correlation; response(F, F) == 1 for unit-variance F.
    """
    f_im = np.asarray(f_im, dtype=np.float64)
    f_mod = np.asarray(f_mod, dtype=np.float64)
    if f_im.shape != f_mod.shape:
        raise DataError(f"shape mismatch: {f_im.shape} vs {f_mod.shape}")
    image = f_im * f_mod
    return image, float(image.mean())


@dataclass
class FingerprintSet:
    model_fps: dict  # domain_id -> fingerprint image
    normalization: str = "zero_mean_unit_var"
    source_count: int = 0

    def domain_ids(self):
        return sorted(self.model_fps)


def build_fingerprint_set(manifest, restorer, k, seed=0, root=None, split=None):
    sub = manifest
    if split is not None:
        import copy

        sub = copy.copy(manifest)
        sub.records = manifest.subset(split=split)
    fps = {}
    for spec in manifest.domains:
        fps[spec.domain_id] = model_fingerprint(
            spec.domain_id, sub, restorer, k, seed=seed, root=root
        )
    return FingerprintSet(model_fps=fps, source_count=k)


@dataclass
class ResponseMatrixResult:
    matrix: np.ndarray       # (n, n) mean responses, rows = image domains
    domain_ids: list
    assignments: list = field(default_factory=list)  # (true_id, argmax_id) per image
    empty_domains: list = field(default_factory=list)

    @property
    def argmax_accuracy(self):
        if not self.assignments:
            return 0.0
        hits = sum(1 for t, p in self.assignments if t == p)
        return hits / len(self.assignments)


def response_matrix(manifest, fingerprint_set, restorer, root=None, split=None):
    """Mean response of each domain's image fingerprints against every model
    fingerprint, plus per-image argmax domain assignments."""
    ids = fingerprint_set.domain_ids()
    n = len(ids)
    matrix = np.zeros((n, n))
    assignments = []
    empty = []
    for r, did in enumerate(ids):
        recs = manifest.subset(split=split, domain_id=did)
        if not recs:
            empty.append(did)
            continue
        rows = []
        for rec in recs:
            img = load_image(manifest.resolve(rec, root)[0])
            f_im = image_fingerprint(img, restorer)
            scores = np.array(
                [response(f_im, fingerprint_set.model_fps[c])[1] for c in ids]
            )
            rows.append(scores)
            assignments.append((did, ids[int(np.argmax(scores))]))
        matrix[r] = np.mean(rows, axis=0)
    if empty:
        log.warning("response_matrix: no held-out images for domains %s", empty)
    return ResponseMatrixResult(
        matrix=matrix, domain_ids=ids, assignments=assignments, empty_domains=empty
    )


def embed_2d(latents, labels, method="tsne", seed=0, perplexity=10.0):
    """Deterministic 2-D embedding of degradation latents.

    method="tsne" (default) is a seeded neighbor embedding; method="pca"
    projects onto the top-2 principal components (a rigid rotation for 2-D
    full-rank input). Returns a list of (x, y, label).
    """
    X = np.asarray(latents, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DataError("need at least two latent vectors")
    if X.shape[1] < 2:
        raise DataError("latent dimensionality must be >= 2")
    labels = list(labels)
    if len(labels) != X.shape[0]:
        raise DataError("labels/latents length mismatch")
    if method == "tsne":
        from sklearn.manifold import TSNE

        per = min(perplexity, (X.shape[0] - 1) / 3.0)
        emb = TSNE(
            n_components=2, random_state=seed, init="pca", perplexity=max(per, 1.0)
        ).fit_transform(X)
    elif method == "pca":
        centered = X - X.mean(axis=0)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        # deterministic sign convention
        signs = np.sign(vt[:2].sum(axis=1))
        signs[signs == 0] = 1.0
        emb = centered @ (vt[:2] * signs[:, None]).T
    else:
        raise DataError(f"unknown embedding method {method!r}")
    return [(float(x), float(y), lab) for (x, y), lab in zip(emb, labels)]


def export_coords_csv(coords, path):
    with open(path, "w") as f:
        f.write("x,y,label\n")
        for x, y, lab in coords:
            f.write(f"{x:.10g},{y:.10g},{lab}\n")


def save_fingerprint_png(fp, path):
    """Min-max scale to 8-bit grayscale for display."""
    fp = np.asarray(fp, dtype=np.float64)
    lo, hi = fp.min(), fp.max()
    scaled = np.zeros_like(fp) if hi == lo else (fp - lo) / (hi - lo)
    Image.fromarray(np.round(scaled * 255).astype(np.uint8), "L").save(path, "PNG")


def write_grid(fp, path):
    """Raw fingerprint as a flat binary grid: magic, version, dtype tag, dims."""
    fp = np.asarray(fp, dtype=np.float32)
    with open(path, "wb") as f:
        f.write(GRID_MAGIC)
        f.write(struct.pack("<HBB", GRID_VERSION, 0, fp.ndim))  # dtype tag 0 = f32
        for d in fp.shape:
            f.write(struct.pack("<I", d))
        f.write(fp.tobytes())


def read_grid(path):
    with open(path, "rb") as f:
        if f.read(4) != GRID_MAGIC:
            raise DataError(f"{path}: not a fingerprint grid file")
        version, dtype_tag, ndim = struct.unpack("<HBB", f.read(4))
        if version != GRID_VERSION or dtype_tag != 0:
            raise DataError(f"{path}: unsupported grid version/dtype")
        dims = struct.unpack("<" + "I" * ndim, f.read(4 * ndim))
        data = np.frombuffer(f.read(), dtype=np.float32)
    return data.reshape(dims)
