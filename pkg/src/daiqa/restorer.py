"""Domain-aware restoration estimator: fit on a manifest, restore images.

Training alternates D -> Dc -> E,G per batch with Adam. The encoder latent is
split: the content part drives reconstruction and is adversarially
domain-confused; the degradation part is cooperatively domain-classified and
serves as the feature-space domain fingerprint.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator

from .errors import ConfigError, DataError, NumericalFailure
from .losses import (
    kl_gaussian,
    loss_adversarial,
    loss_domain_cls,
    loss_kl,
    loss_perceptual,
    total_losses,
)
from .manifest import Manifest
from .networks import (
    Decoder,
    DeskFeatureExtractor,
    DomainClassifier,
    Encoder,
    PatchDiscriminator,
)
from .patches import sample_patches
from .synthesize import load_image
from .validation import check_image

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

LOG_COLUMNS = "iter,L_E,L_G,L_D,L_Dc,L_kl,L_P,L_adv,L_cls"


@dataclass
class RestorationOutput:
    restored: np.ndarray       # [0, 1], input spatial shape
    discrepancy: np.ndarray    # |input - restored|, elementwise >= 0
    features_h: np.ndarray     # deepest encoder feature map (C, h, w)
    domain_logits: np.ndarray  # length n_domains
    degradation_latent: np.ndarray


def _to_tensor(img, device):
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))).float().to(device)[None]


def _to_image(t):
    return t.detach().cpu().numpy()[0].transpose(1, 2, 0).astype(np.float64)


class DomainAwareRestorer(BaseEstimator):
    """Encoder/decoder restoration network with domain-disentangled latents.

    sklearn-style: constructor stores hyperparameters, `fit` trains on a
    manifest, `transform` maps distorted images to restorations.
    """

    def __init__(
        self,
        depth=3,
        base_channels=16,
        content_channels=64,
        degradation_dim=8,
        lam_kl=5.0,
        lam_perceptual=100.0,
        gan_mode="least_squares",
        lr=2e-4,
        beta1=0.5,
        beta2=0.999,
        batch_size=8,
        iterations=3000,
        train_patch_size=64,
        extractor_seed=0,
        seed=0,
        device="cpu",
        ablate_perceptual=False,
        ablate_adversarial=False,
        ablate_domain_cls=False,
    ):
        self.depth = depth
        self.base_channels = base_channels
        self.content_channels = content_channels
        self.degradation_dim = degradation_dim
        self.lam_kl = lam_kl
        self.lam_perceptual = lam_perceptual
        self.gan_mode = gan_mode
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.batch_size = batch_size
        self.iterations = iterations
        self.train_patch_size = train_patch_size
        self.extractor_seed = extractor_seed
        self.seed = seed
        self.device = device
        self.ablate_perceptual = ablate_perceptual
        self.ablate_adversarial = ablate_adversarial
        self.ablate_domain_cls = ablate_domain_cls

    # -- construction ------------------------------------------------------

    def _check_config(self):
        if self.depth < 2:
            raise ConfigError(f"depth must be >= 2, got {self.depth}")
        if self.lam_kl < 0 or self.lam_perceptual < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.gan_mode not in ("least_squares", "logistic"):
            raise ConfigError(f"unknown gan_mode {self.gan_mode!r}")

    def _build(self, n_domains):
        self._check_config()
        torch.manual_seed(self.seed)
        self.n_domains_ = n_domains
        self.encoder_ = Encoder(
            self.depth, self.base_channels, self.content_channels, self.degradation_dim
        ).to(self.device)
        self.decoder_ = Decoder(
            self.depth, self.base_channels, self.content_channels, self.degradation_dim
        ).to(
            self.device
        )
        self.disc_ = PatchDiscriminator(self.base_channels, self.depth).to(self.device)
        self.domain_cls_ = DomainClassifier(
            self.degradation_dim, self.content_channels, n_domains
        ).to(self.device)
        self.extractor_ = DeskFeatureExtractor(seed=self.extractor_seed).to(self.device)
        self.iteration_ = 0
        return self

    @property
    def is_fitted(self):
        return hasattr(self, "encoder_")

    def _require_fitted(self):
        if not self.is_fitted:
            raise ConfigError("restorer is not fitted/loaded")

    # -- data --------------------------------------------------------------

    def _load_training_arrays(self, manifest, root):
        recs = manifest.subset(split="train")
        if not recs:
            raise DataError("manifest has no train split records")
        ids = sorted(d.domain_id for d in manifest.domains)
        self.domain_ids_ = ids
        id_to_class = {d: i for i, d in enumerate(ids)}
        xs, ys, labels = [], [], []
        ps = self.train_patch_size
        for rec in recs:
            dist_p, ref_p = manifest.resolve(rec, root)
            dist = load_image(dist_p)
            ref = load_image(ref_p)
            if min(dist.shape[:2]) < ps:
                raise DataError(
                    f"{rec.image_path}: smaller than train_patch_size {ps}"
                )
            for (patch, (y, x)) in sample_patches(dist, ps, mode="grid", stride=ps):
                xs.append(patch)
                ys.append(ref[y : y + ps, x : x + ps])
                labels.append(id_to_class[rec.domain_id])
        X = np.stack(xs).transpose(0, 3, 1, 2).astype(np.float32)
        Y = np.stack(ys).transpose(0, 3, 1, 2).astype(np.float32)
        c = np.asarray(labels, dtype=np.int64)
        return X, Y, c

    # -- training ----------------------------------------------------------

    def fit(self, manifest, root=None, log_path=None, checkpoint_path=None):
        """Train on the manifest's train split. Appends per-iteration loss rows
        to `log_path` (CSV) when given; on a non-finite loss the last good
        weights are saved to `checkpoint_path` and NumericalFailure raised."""
        if not isinstance(manifest, Manifest):
            manifest = Manifest.load(manifest)
        self._build(manifest.n_domains)
        X, Y, labels = self._load_training_arrays(manifest, root)
        n = len(X)
        rng = np.random.default_rng(self.seed)
        gen = torch.Generator(device="cpu").manual_seed(self.seed + 1)

        params_eg = list(self.encoder_.parameters()) + list(self.decoder_.parameters())
        opt_eg = torch.optim.Adam(params_eg, lr=self.lr, betas=(self.beta1, self.beta2))
        opt_d = torch.optim.Adam(
            self.disc_.parameters(), lr=self.lr, betas=(self.beta1, self.beta2)
        )
        opt_dc = torch.optim.Adam(
            self.domain_cls_.parameters(), lr=self.lr, betas=(self.beta1, self.beta2)
        )

        log_file = None
        if log_path is not None:
            log_file = open(log_path, "a")
            log_file.write(LOG_COLUMNS + "\n")

        order = rng.permutation(n)
        cursor = 0
        try:
            for it in range(self.iterations):
                if cursor + self.batch_size > n:
                    order = rng.permutation(n)
                    cursor = 0
                idx = order[cursor : cursor + self.batch_size]
                cursor += self.batch_size
                x = torch.from_numpy(X[idx]).to(self.device)
                y = torch.from_numpy(Y[idx]).to(self.device)
                c = torch.from_numpy(labels[idx]).to(self.device)

                code, _ = self.encoder_(x)
                z_c, z_d = code.sample(generator=gen)
                restored = self.decoder_(z_c, z_d, x)

                zero = torch.zeros((), device=self.device)

                # D step
                if not self.ablate_adversarial:
                    d_real = self.disc_(y)
                    d_fake = self.disc_(restored.detach())
                    if self.gan_mode == "logistic":
                        d_real, d_fake = torch.sigmoid(d_real), torch.sigmoid(d_fake)
                    l_d = loss_adversarial(d_real, d_fake, "D", self.gan_mode)
                    opt_d.zero_grad()
                    l_d.backward()
                    opt_d.step()
                else:
                    l_d = zero

                # Dc step
                if not self.ablate_domain_cls:
                    dl = self.domain_cls_.degradation_logits(z_d.detach())
                    cl = self.domain_cls_.content_logits(z_c.detach())
                    l_dc = loss_domain_cls(dl, c, "discriminator", content_logits=cl)
                    opt_dc.zero_grad()
                    l_dc.backward()
                    opt_dc.step()
                else:
                    l_dc = zero

                # E, G step
                l_kl = loss_kl(code)
                if not self.ablate_perceptual:
                    l_p = loss_perceptual(restored, y, self.extractor_)
                else:
                    l_p = zero
                if not self.ablate_adversarial:
                    d_fake = self.disc_(restored)
                    if self.gan_mode == "logistic":
                        d_fake = torch.sigmoid(d_fake)
                    l_adv_g = loss_adversarial(None, d_fake, "G", self.gan_mode)
                else:
                    l_adv_g = zero
                if not self.ablate_domain_cls:
                    dl = self.domain_cls_.degradation_logits(z_d)
                    cl = self.domain_cls_.content_logits(z_c)
                    l_cls_e = loss_domain_cls(dl, c, "encoder", content_logits=cl)
                else:
                    l_cls_e = zero

                totals = total_losses(
                    {
                        "kl": l_kl,
                        "perceptual": l_p,
                        "cls_encoder": l_cls_e,
                        "adv_generator": l_adv_g,
                    },
                    self.lam_kl,
                    self.lam_perceptual,
                )
                l_eg = (
                    self.lam_kl * l_kl
                    + self.lam_perceptual * l_p
                    + l_cls_e
                    + l_adv_g
                )

                def _scalar(v):
                    return float(v.detach()) if torch.is_tensor(v) else float(v)

                values = [
                    _scalar(totals["L_E"]),
                    _scalar(totals["L_G"]),
                    _scalar(l_d),
                    _scalar(l_dc),
                    _scalar(l_kl),
                    _scalar(l_p),
                    _scalar(l_adv_g),
                    _scalar(l_cls_e),
                ]
                if not all(np.isfinite(values)):
                    if checkpoint_path is not None:
                        self.save(checkpoint_path)
                    raise NumericalFailure(
                        f"non-finite loss at iteration {it}: {values}"
                    )

                opt_eg.zero_grad()
                l_eg.backward()
                opt_eg.step()

                self.iteration_ = it + 1
                if log_file is not None:
                    log_file.write(
                        ",".join([str(it)] + [f"{v:.6f}" for v in values]) + "\n"
                    )
        finally:
            if log_file is not None:
                log_file.close()
        return self

    # -- inference ---------------------------------------------------------

    def _pad_to_multiple(self, img):
        factor = 2 ** self.depth
        h, w, _ = img.shape
        ph = (-h) % factor
        pw = (-w) % factor
        if ph or pw:
            img = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="reflect")
        return img, (h, w)

    @torch.no_grad()
    def restore(self, img):
        """Eval-mode forward pass using posterior means; reflect-pads inputs
        whose dims are not multiples of 2^depth and crops afterwards."""
        self._require_fitted()
        img = check_image(img)
        padded, (h, w) = self._pad_to_multiple(img)
        x = _to_tensor(padded.astype(np.float32), self.device)
        code, feats = self.encoder_(x)
        z_c, z_d = code.means()
        restored_t = self.decoder_(z_c, z_d, x)
        logits = self.domain_cls_.degradation_logits(z_d)
        restored = _to_image(restored_t)[:h, :w]
        discrepancy = np.abs(img - restored)
        return RestorationOutput(
            restored=restored,
            discrepancy=discrepancy,
            features_h=feats.cpu().numpy()[0],
            domain_logits=logits.cpu().numpy()[0],
            degradation_latent=z_d.cpu().numpy()[0],
        )

    def transform(self, X):
        """Restore a sequence of images; returns a list of restored images."""
        return [self.restore(img).restored for img in X]

    @torch.no_grad()
    def encode_degradation(self, images, sample=False, seed=0):
        """Degradation latents for a sequence of images.

        By default returns the posterior means. With ``sample=True`` a seeded
        posterior sample is drawn instead; this is the honest view for
        visualization, since a collapsed (uninformative) posterior then looks
        like the prior cloud rather than a spuriously structured point set.
        """
        self._require_fitted()
        gen = torch.Generator().manual_seed(seed) if sample else None
        out = []
        for img in images:
            padded, _ = self._pad_to_multiple(check_image(img))
            x = _to_tensor(padded.astype(np.float32), self.device)
            code, _ = self.encoder_(x)
            if sample:
                z = code.degradation_mu + torch.exp(
                    0.5 * code.degradation_logvar
                ) * torch.randn(code.degradation_mu.shape, generator=gen)
            else:
                z = code.degradation_mu
            out.append(z.detach().cpu().numpy()[0])
        return np.stack(out)

    def predict_domain(self, images):
        """Classify each image's degradation domain from its latent; returns
        manifest domain ids."""
        self._require_fitted()
        z = torch.from_numpy(self.encode_degradation(images)).float().to(self.device)
        with torch.no_grad():
            logits = self.domain_cls_.degradation_logits(z)
        classes = logits.argmax(dim=1).cpu().numpy()
        ids = getattr(self, "domain_ids_", list(range(self.n_domains_)))
        return np.asarray([ids[c] for c in classes])

    # -- persistence -------------------------------------------------------

    def save(self, path):
        self._require_fitted()
        payload = {
            "format_version": CHECKPOINT_VERSION,
            "kind": "restorer",
            "params": self.get_params(),
            "n_domains": self.n_domains_,
            "domain_ids": getattr(self, "domain_ids_", list(range(self.n_domains_))),
            "iteration": self.iteration_,
            "seed": self.seed,
            "state": {
                "encoder": self.encoder_.state_dict(),
                "decoder": self.decoder_.state_dict(),
                "disc": self.disc_.state_dict(),
                "domain_cls": self.domain_cls_.state_dict(),
            },
        }
        torch.save(payload, path)

    @classmethod
    def load(cls, path, device="cpu"):
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"checkpoint not found: {p}")
        payload = torch.load(p, map_location=device, weights_only=False)
        if not isinstance(payload, dict) or payload.get("kind") != "restorer":
            raise ConfigError(f"{p} is not a restorer checkpoint")
        if payload.get("format_version") != CHECKPOINT_VERSION:
            raise ConfigError(
                f"checkpoint format {payload.get('format_version')} != {CHECKPOINT_VERSION}"
            )
        params = dict(payload["params"])
        params["device"] = device
        est = cls(**params)
        est._build(payload["n_domains"])
        est.domain_ids_ = list(payload["domain_ids"])
        try:
            est.encoder_.load_state_dict(payload["state"]["encoder"])
            est.decoder_.load_state_dict(payload["state"]["decoder"])
            est.disc_.load_state_dict(payload["state"]["disc"])
            est.domain_cls_.load_state_dict(payload["state"]["domain_cls"])
        except (KeyError, RuntimeError) as e:
            raise ConfigError(f"checkpoint/config mismatch: {e}") from e
        est.iteration_ = payload["iteration"]
        est.encoder_.eval()
        est.decoder_.eval()
        return est

    def clone_untrained(self):
        """A fresh estimator with the same hyperparameters, unbuilt."""
        return copy.deepcopy(self.__class__(**self.get_params()))
