"""Training losses for the restoration model.

All functions take and return torch tensors and are differentiable, so the
same code paths are exercised by the finite-difference gradient checks.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from .errors import ConfigError, DataError

_LOG_EPS = 1e-8


def kl_gaussian(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over latent dims, batch mean.

    Closed form 0.5 * sum(mu^2 + e^logvar - logvar - 1).
    """
    per_sample = 0.5 * (mu.pow(2) + logvar.exp() - logvar - 1.0)
    return per_sample.reshape(per_sample.shape[0], -1).sum(dim=1).mean()


def loss_kl(code):
    """Total KL of a split latent code (content part + degradation part)."""
    return kl_gaussian(code.content_mu, code.content_logvar) + kl_gaussian(
        code.degradation_mu, code.degradation_logvar
    )


def cross_entropy(logits, targets):
    if logits.dim() == 1:
        logits = logits.unsqueeze(0)
    targets = torch.as_tensor(targets, device=logits.device)
    if targets.dim() == 0:
        targets = targets.unsqueeze(0)
    n = logits.shape[-1]
    if targets.min() < 0 or targets.max() >= n:
        raise DataError(f"domain id out of range [0, {n})")
    return F.cross_entropy(logits, targets)


def uniform_cross_entropy(logits):
    """Cross-entropy against the uniform distribution; minimized when the
    classifier is maximally confused."""
    if logits.dim() == 1:
        logits = logits.unsqueeze(0)
    logp = F.log_softmax(logits, dim=-1)
    return -logp.mean(dim=-1).mean()


def loss_domain_cls(deg_logits, true_domain, side, content_logits=None):
    """Domain classification loss.

    side="discriminator": cross-entropy of the logits against the true domain
    (on both latent parts when content logits are given).
    side="encoder": cooperative cross-entropy on the degradation latent plus
    the adversarial confusion term (cross-entropy vs uniform) on the content
    latent when its logits are given.
    """
    if side == "discriminator":
        total = cross_entropy(deg_logits, true_domain)
        if content_logits is not None:
            total = total + cross_entropy(content_logits, true_domain)
        return total
    if side == "encoder":
        total = cross_entropy(deg_logits, true_domain)
        if content_logits is not None:
            total = total + uniform_cross_entropy(content_logits)
        return total
    raise ConfigError(f"unknown side {side!r}")


def loss_perceptual(restored, gt, extractor, layers=None):
    """Mean over extractor layers of the per-element L1 feature distance."""
    feats_r = extractor(restored)
    feats_g = extractor(gt)
    if layers is not None:
        if len(layers) == 0:
            raise ConfigError("perceptual loss needs a non-empty layer set")
        feats_r = [feats_r[i] for i in layers]
        feats_g = [feats_g[i] for i in layers]
    if not feats_r:
        raise ConfigError("extractor produced no feature maps")
    terms = [torch.mean(torch.abs(fr - fg)) for fr, fg in zip(feats_r, feats_g)]
    return torch.stack(terms).mean()


def loss_adversarial(d_real, d_fake, side, mode="least_squares"):
    """GAN objective for one side.

    least_squares: L_D = E[(D(real)-1)^2] + E[D(fake)^2], L_G = E[(D(fake)-1)^2].
    logistic: non-saturating form with discriminator outputs read as
    probabilities, L_D = E[log d_fake] + E[log(1 - d_real)], L_G = -E[log d_fake].
    """
    if mode == "least_squares":
        if side == "D":
            return ((d_real - 1.0) ** 2).mean() + (d_fake ** 2).mean()
        if side == "G":
            return ((d_fake - 1.0) ** 2).mean()
    elif mode == "logistic":
        if side == "D":
            return (
                torch.log(d_fake.clamp_min(_LOG_EPS)).mean()
                + torch.log((1.0 - d_real).clamp_min(_LOG_EPS)).mean()
            )
        if side == "G":
            return -torch.log(d_fake.clamp_min(_LOG_EPS)).mean()
    else:
        raise ConfigError(f"unknown gan mode {mode!r}")
    raise ConfigError(f"unknown side {side!r}")


def total_losses(components, lam_kl, lam_perceptual):
    """Combine per-component losses into the four optimizer objectives.

    components: dict with keys kl, perceptual, cls_encoder, cls_discriminator,
    adv_generator, adv_discriminator. Missing components count as zero.
    """
    def get(key):
        return components.get(key, 0.0)

    l_e = lam_kl * get("kl") + lam_perceptual * get("perceptual") + get("cls_encoder")
    l_g = lam_kl * get("kl") + lam_perceptual * get("perceptual") + get("adv_generator")
    l_dc = get("cls_discriminator")
    l_d = get("adv_discriminator")
    return {"L_E": l_e, "L_G": l_g, "L_D": l_d, "L_Dc": l_dc}


def uniform_ce_value(n):
    """ln(n): cross-entropy of uniform logits, handy for sanity thresholds."""
    return math.log(n)
