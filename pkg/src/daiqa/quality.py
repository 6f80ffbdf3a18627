"""Hallucination-guided quality regression.

Per patch, a shared-weight CNN encodes the distorted patch and its discrepancy
map; the pooled deepest restoration features are linearly projected and fused;
parallel branches emit a quality score and a raw weight. Image scores are the
weight-normalized average over patches.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
from sklearn.base import BaseEstimator, RegressorMixin

from .errors import ConfigError, DataError, NumericalFailure
from .manifest import Manifest
from .metrics import pseudo_label
from .patches import sample_patches
from .synthesize import load_image
from .validation import check_image

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class PatchPrediction:
    s_i: float
    w_raw: float
    w_i: float
    coord: tuple

    def __post_init__(self):
        assert self.w_i > 0


@dataclass
class QualityReport:
    score: float
    predicted_domain: int
    domain_confidence: float
    patches: list
    n_patches: int

    def to_json(self):
        return {
            "score": self.score,
            "predicted_domain": self.predicted_domain,
            "domain_confidence": self.domain_confidence,
            "n_patches": self.n_patches,
        }


def activate_weight(w_raw, eps=1e-6):
    """w = max(0, w') + eps, so every patch keeps strictly positive weight."""
    if eps <= 0:
        raise ConfigError("eps must be > 0")
    return max(0.0, float(w_raw)) + eps


def aggregate(patches):
    """Weight-normalized score: sum of (w_i / sum w_j) * s_i over patches."""
    if not patches:
        raise DataError("cannot aggregate an empty patch list")
    w = np.asarray([p.w_i for p in patches], dtype=np.float64)
    s = np.asarray([p.s_i for p in patches], dtype=np.float64)
    return float(np.sum(w / w.sum() * s))


def loss_regression(predictions, targets):
    """Mean L1 between patch scores and their targets."""
    if isinstance(predictions, torch.Tensor) or isinstance(targets, torch.Tensor):
        p = predictions if isinstance(predictions, torch.Tensor) else torch.as_tensor(predictions)
        t = targets if isinstance(targets, torch.Tensor) else torch.as_tensor(targets)
        if p.shape != t.shape:
            raise DataError(f"length mismatch: {tuple(p.shape)} vs {tuple(t.shape)}")
        return torch.mean(torch.abs(p - t))
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise DataError(f"length mismatch: {p.shape} vs {t.shape}")
    return float(np.mean(np.abs(p - t)))


class _PatchTrunk(nn.Module):
    """Shared-weight extractor applied to both the distorted patch and the
    discrepancy map."""

    def __init__(self, out_dim=64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(32, out_dim, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.AdaptiveAvgPool2d(1),
        )
        self.out_dim = out_dim

    def forward(self, x):
        return self.net(x).flatten(1)


class _RegressionNet(nn.Module):
    def __init__(self, feat_channels, fusion_dim=32, trunk_dim=64, hidden=128,
                 use_fusion=True):
        super().__init__()
        self.use_fusion = use_fusion
        self.trunk = _PatchTrunk(trunk_dim)
        self.project = nn.Linear(feat_channels, fusion_dim)
        fused = 2 * trunk_dim + (fusion_dim if use_fusion else 0)
        self.body = nn.Sequential(
            nn.Linear(fused, hidden),
            nn.LeakyReLU(0.2, inplace=True),
        )
        # parallel branches with identical output dimensionality
        self.score_branch = nn.Linear(hidden, 1)
        self.weight_branch = nn.Linear(hidden, 1)

    def forward(self, dist, disc, feat_vec):
        f_d = self.trunk(dist)
        f_r = self.trunk(disc)
        parts = [f_d, f_r]
        if self.use_fusion:
            parts.append(self.project(feat_vec))
        h = self.body(torch.cat(parts, dim=1))
        s = torch.sigmoid(self.score_branch(h)).squeeze(1)
        w_raw = self.weight_branch(h).squeeze(1)
        return s, w_raw


class QualityRegressor(BaseEstimator, RegressorMixin):
    """Patch-weighted quality regressor on top of a frozen restorer."""

    def __init__(
        self,
        restorer=None,
        patch_size=64,
        test_stride=32,
        fusion_dim=32,
        eps=1e-6,
        lr=1e-3,
        batch_size=32,
        iterations=3000,
        seed=0,
        device="cpu",
        patch_pseudo_oracle=None,
        ablate_semantic_fusion=False,
    ):
        self.restorer = restorer
        self.patch_size = patch_size
        self.test_stride = test_stride
        self.fusion_dim = fusion_dim
        self.eps = eps
        self.lr = lr
        self.batch_size = batch_size
        self.iterations = iterations
        self.seed = seed
        self.device = device
        self.patch_pseudo_oracle = patch_pseudo_oracle
        self.ablate_semantic_fusion = ablate_semantic_fusion

    # -- internals ---------------------------------------------------------

    def _restorer(self):
        if self.restorer is None:
            raise ConfigError("no restorer checkpoint configured")
        if isinstance(self.restorer, (str,)) or hasattr(self.restorer, "__fspath__"):
            from .restorer import DomainAwareRestorer

            self.restorer = DomainAwareRestorer.load(self.restorer, device=self.device)
        return self.restorer

    def _build(self):
        if self.eps <= 0:
            raise ConfigError("eps must be > 0")
        torch.manual_seed(self.seed)
        feat_channels = self._restorer().encoder_.deepest_channels
        self.net_ = _RegressionNet(
            feat_channels,
            fusion_dim=self.fusion_dim,
            use_fusion=not self.ablate_semantic_fusion,
        ).to(self.device)
        self.iteration_ = 0
        return self

    @property
    def is_fitted(self):
        return hasattr(self, "net_")

    def _patch_inputs(self, img, stride):
        """(distorted, discrepancy, pooled feature vec, coord) per grid patch."""
        rest = self._restorer()
        h, w = img.shape[:2]
        if min(h, w) < self.patch_size:
            warnings.warn(
                f"image {h}x{w} smaller than patch_size {self.patch_size}; "
                "using a single center-padded patch"
            )
            ph = max(0, self.patch_size - h)
            pw = max(0, self.patch_size - w)
            img = np.pad(
                img,
                ((ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2), (0, 0)),
                mode="reflect",
            )
            h, w = img.shape[:2]
        out = []
        for patch, coord in sample_patches(img, self.patch_size, mode="grid", stride=stride):
            ro = rest.restore(patch)
            feat_vec = ro.features_h.mean(axis=(1, 2))
            out.append((patch, ro.discrepancy, feat_vec, coord, ro.domain_logits))
        return out

    def make_regression_input(self, patch):
        """Fused regression inputs for one patch: (patch, discrepancy,
        projected feature vector)."""
        if not self.is_fitted:
            raise ConfigError("regressor is not fitted/loaded")
        rest = self._restorer()
        patch = check_image(patch)
        ro = rest.restore(patch)
        feat_vec = torch.from_numpy(ro.features_h.mean(axis=(1, 2))).float()[None]
        with torch.no_grad():
            projected = self.net_.project(feat_vec.to(self.device)).cpu().numpy()[0]
        return patch, ro.discrepancy, projected

    # -- training ----------------------------------------------------------

    def fit(self, manifest, root=None, log_path=None, checkpoint_path=None):
        """Train the patch score/weight net on labeled train-split records.

        Targets are the record's canonical score; when `patch_pseudo_oracle`
        is set the target of each patch is the full-reference oracle evaluated
        on that patch instead.
        """
        self._restorer()  # fail fast when no restorer is attached
        if not isinstance(manifest, Manifest):
            manifest = Manifest.load(manifest)
        recs = manifest.subset(split="train")
        if not recs:
            raise DataError("manifest has no train split records")
        if self.patch_pseudo_oracle is None and any(r.score is None for r in recs):
            raise DataError("train records lack scores and no pseudo oracle configured")
        self._build()

        dists, discs, feats, targets = [], [], [], []
        ps = self.patch_size
        for rec in recs:
            dist_p, ref_p = manifest.resolve(rec, root)
            dist = load_image(dist_p)
            ref = load_image(ref_p)
            for (patch, disc, feat_vec, (y, x), _logits) in self._patch_inputs(dist, ps):
                if self.patch_pseudo_oracle is not None:
                    target = pseudo_label(
                        patch, ref[y : y + ps, x : x + ps], oracle=self.patch_pseudo_oracle
                    )
                else:
                    target = rec.score
                dists.append(patch)
                discs.append(disc)
                feats.append(feat_vec)
                targets.append(target)
        X_d = np.stack(dists).transpose(0, 3, 1, 2).astype(np.float32)
        X_c = np.stack(discs).transpose(0, 3, 1, 2).astype(np.float32)
        X_f = np.stack(feats).astype(np.float32)
        t = np.asarray(targets, dtype=np.float32)

        opt = torch.optim.Adam(self.net_.parameters(), lr=self.lr, betas=(0.5, 0.999))
        rng = np.random.default_rng(self.seed)
        n = len(t)
        log_file = open(log_path, "a") if log_path is not None else None
        if log_file is not None:
            log_file.write("iter,L_R\n")
        order = rng.permutation(n)
        cursor = 0
        try:
            for it in range(self.iterations):
                if cursor + self.batch_size > n:
                    order = rng.permutation(n)
                    cursor = 0
                idx = order[cursor : cursor + self.batch_size]
                cursor += self.batch_size
                s_pred, _w = self.net_(
                    torch.from_numpy(X_d[idx]).to(self.device),
                    torch.from_numpy(X_c[idx]).to(self.device),
                    torch.from_numpy(X_f[idx]).to(self.device),
                )
                loss = loss_regression(s_pred, torch.from_numpy(t[idx]).to(self.device))
                val = float(loss.detach())
                if not np.isfinite(val):
                    if checkpoint_path is not None:
                        self.save(checkpoint_path)
                    raise NumericalFailure(f"non-finite regression loss at iter {it}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                self.iteration_ = it + 1
                if log_file is not None:
                    log_file.write(f"{it},{val:.6f}\n")
        finally:
            if log_file is not None:
                log_file.close()
        return self

    # -- inference ---------------------------------------------------------

    @torch.no_grad()
    def _predict_patches(self, inputs):
        X_d = np.stack([p[0] for p in inputs]).transpose(0, 3, 1, 2).astype(np.float32)
        X_c = np.stack([p[1] for p in inputs]).transpose(0, 3, 1, 2).astype(np.float32)
        X_f = np.stack([p[2] for p in inputs]).astype(np.float32)
        s, w_raw = self.net_(
            torch.from_numpy(X_d).to(self.device),
            torch.from_numpy(X_c).to(self.device),
            torch.from_numpy(X_f).to(self.device),
        )
        return s.cpu().numpy(), w_raw.cpu().numpy()

    def predict_image(self, img):
        """Patch-grid prediction at test_stride, aggregated with normalized
        weights; distortion identification from patch-mean domain logits."""
        if not self.is_fitted:
            raise ConfigError("regressor is not fitted/loaded")
        img = check_image(img)
        inputs = self._patch_inputs(img, self.test_stride)
        s, w_raw = self._predict_patches(inputs)
        preds = [
            PatchPrediction(
                s_i=float(si),
                w_raw=float(wi),
                w_i=activate_weight(wi, self.eps),
                coord=inp[3],
            )
            for si, wi, inp in zip(s, w_raw, inputs)
        ]
        logits = np.stack([inp[4] for inp in inputs])
        mean_logits = logits.mean(axis=0)
        probs = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        cls = int(np.argmax(mean_logits))
        rest = self._restorer()
        ids = getattr(rest, "domain_ids_", list(range(rest.n_domains_)))
        return QualityReport(
            score=aggregate(preds),
            predicted_domain=int(ids[cls]),
            domain_confidence=float(probs.mean(axis=0)[cls]),
            patches=preds,
            n_patches=len(preds),
        )

    def predict(self, X):
        """Image-level scores for a sequence of images."""
        return np.asarray([self.predict_image(img).score for img in X])

    # -- persistence -------------------------------------------------------

    def save(self, path):
        if not self.is_fitted:
            raise ConfigError("regressor is not fitted/loaded")
        params = self.get_params(deep=False)
        params.pop("restorer", None)  # the restorer ships in its own checkpoint
        params.pop("patch_pseudo_oracle", None)
        payload = {
            "format_version": CHECKPOINT_VERSION,
            "kind": "regressor",
            "params": params,
            "iteration": self.iteration_,
            "seed": self.seed,
            "state": self.net_.state_dict(),
        }
        torch.save(payload, path)

    @classmethod
    def load(cls, path, restorer, device="cpu"):
        import pathlib

        p = pathlib.Path(path)
        if not p.exists():
            raise ConfigError(f"checkpoint not found: {p}")
        payload = torch.load(p, map_location=device, weights_only=False)
        if not isinstance(payload, dict) or payload.get("kind") != "regressor":
            raise ConfigError(f"{p} is not a regressor checkpoint")
        if payload.get("format_version") != CHECKPOINT_VERSION:
            raise ConfigError(
                f"checkpoint format {payload.get('format_version')} != {CHECKPOINT_VERSION}"
            )
        params = dict(payload["params"])
        params["device"] = device
        est = cls(restorer=restorer, **params)
        est._build()
        try:
            est.net_.load_state_dict(payload["state"])
        except RuntimeError as e:
            raise ConfigError(f"checkpoint/config mismatch: {e}") from e
        est.iteration_ = payload["iteration"]
        return est
