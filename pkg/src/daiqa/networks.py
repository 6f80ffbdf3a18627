"""Network building blocks for the disentangling restoration model.

Encoder: stride-2 4x4 convs, instance norm, leaky ReLU; deepest feature map
feeds a content head (spatial mu/logvar) and a pooled degradation head
(vector mu/logvar). The decoder mirrors the encoder and predicts a residual
added to the input. The image discriminator is a patch discriminator; the
domain classifier is a small head over latent vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import DataError


@dataclass
class LatentCode:
    """Split latent: spatial content part and pooled degradation part."""

    content_mu: torch.Tensor
    content_logvar: torch.Tensor
    degradation_mu: torch.Tensor
    degradation_logvar: torch.Tensor

    def sample(self, generator=None):
        eps_c = torch.randn(
            self.content_mu.shape, generator=generator, device=self.content_mu.device
        )
        eps_d = torch.randn(
            self.degradation_mu.shape, generator=generator, device=self.degradation_mu.device
        )
        z_c = self.content_mu + torch.exp(0.5 * self.content_logvar) * eps_c
        z_d = self.degradation_mu + torch.exp(0.5 * self.degradation_logvar) * eps_d
        return z_c, z_d

    def means(self):
        return self.content_mu, self.degradation_mu


class _EncBlock(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 4, stride=2, padding=1)
        self.norm = nn.InstanceNorm2d(cout)
        self.act = nn.LeakyReLU(0.2, inplace=True)

    def forward(self, x):
        pre = self.conv(x)
        return self.act(self.norm(pre)), pre


class Encoder(nn.Module):
    def __init__(self, depth=3, base_channels=16, content_channels=64, degradation_dim=8):
        super().__init__()
        self.depth = depth
        self.degradation_dim = degradation_dim
        self.content_channels = content_channels
        chans = [3] + [base_channels * 2 ** i for i in range(depth)]
        self.blocks = nn.ModuleList(_EncBlock(chans[i], chans[i + 1]) for i in range(depth))
        deepest = chans[-1]
        self.deepest_channels = deepest
        self.content_head = nn.Conv2d(deepest, 2 * content_channels, 3, padding=1)
        # the degradation head pools pre-normalization statistics from every
        # level: instance norm strips exactly the per-channel energy profile
        # that distortion leaves
        stat_dim = 2 * sum(chans[1:])
        deg_out = nn.Linear(64, 2 * degradation_dim)
        # start the degradation posterior tight (logvar -2) so the cooperative
        # classification game is not drowned by sampling noise at init
        with torch.no_grad():
            deg_out.bias[degradation_dim:].fill_(-2.0)
        self.deg_head = nn.Sequential(
            nn.Linear(stat_dim, 64),
            nn.LeakyReLU(0.2, inplace=True),
            deg_out,
        )

    def forward(self, x):
        h, w = x.shape[-2:]
        factor = 2 ** self.depth
        if h % factor or w % factor:
            raise DataError(
                f"encoder input dims ({h}, {w}) must be multiples of {factor}"
            )
        feat = x
        stats = []
        for block in self.blocks:
            feat, pre = block(feat)
            stats.extend([pre.mean(dim=(2, 3)), pre.std(dim=(2, 3))])
        features_h = feat
        cm = self.content_head(feat)
        content_mu, content_logvar = torch.chunk(cm, 2, dim=1)
        stats = torch.cat(stats, dim=1)
        dm = self.deg_head(stats)
        deg_mu, deg_logvar = torch.chunk(dm, 2, dim=1)
        code = LatentCode(content_mu, content_logvar, deg_mu, deg_logvar)
        return code, features_h


def _dec_block(cin, cout):
    return nn.Sequential(
        nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1),
        nn.InstanceNorm2d(cout),
        nn.LeakyReLU(0.2, inplace=True),
    )


class Decoder(nn.Module):
    """Mirror of the encoder; predicts a residual added to the input image.

    Consumes both latent parts: the spatial content code and the degradation
    vector (broadcast over the bottleneck), so the correction is conditioned on
    what kind of damage the encoder diagnosed.
    """

    def __init__(self, depth=3, base_channels=16, content_channels=64, degradation_dim=8):
        super().__init__()
        chans = [base_channels * 2 ** i for i in range(depth)]  # e.g. 16, 32, 64
        self.inflate = nn.Conv2d(content_channels + degradation_dim, chans[-1], 3, padding=1)
        ups = []
        for i in reversed(range(1, depth)):
            ups.append(_dec_block(chans[i], chans[i - 1]))
        self.ups = nn.Sequential(*ups)
        self.last_up = nn.Sequential(
            nn.ConvTranspose2d(chans[0], chans[0], 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
        )
        # the residual head sees the input image and the degradation vector, so
        # corrections can act on pixel detail the bottleneck cannot carry and
        # stay conditioned on the diagnosed degradation at full resolution
        self.final = nn.Sequential(
            nn.Conv2d(chans[0] + 3 + degradation_dim, chans[0], 3, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(chans[0], 3, 3, padding=1),
        )

    def residual(self, z_content, z_deg, x):
        tiled = z_deg[:, :, None, None].expand(-1, -1, *z_content.shape[-2:])
        feat = self.inflate(torch.cat([z_content, tiled], dim=1))
        feat = self.ups(feat)
        feat = self.last_up(feat)
        full = z_deg[:, :, None, None].expand(-1, -1, *x.shape[-2:])
        return self.final(torch.cat([feat, x, full], dim=1))

    def forward(self, z_content, z_deg, x):
        r = self.residual(z_content, z_deg, x)
        if r.shape != x.shape:
            raise DataError(f"residual shape {tuple(r.shape)} != input {tuple(x.shape)}")
        return torch.clamp(x + r, 0.0, 1.0)


class PatchDiscriminator(nn.Module):
    def __init__(self, base_channels=16, depth=3):
        super().__init__()
        layers = []
        cin = 3
        cout = base_channels
        for i in range(depth):
            layers.append(nn.Conv2d(cin, cout, 4, stride=2, padding=1))
            if i > 0:
                layers.append(nn.InstanceNorm2d(cout))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            cin, cout = cout, cout * 2
        layers.append(nn.Conv2d(cin, 1, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class DomainClassifier(nn.Module):
    """Domain heads over the two latent parts.

    The degradation head is trained cooperatively with the encoder; the content
    head plays the adversarial game (the encoder tries to confuse it).
    """

    def __init__(self, degradation_dim, content_channels, n_domains, hidden=32):
        super().__init__()
        self.n_domains = n_domains
        self.deg_net = nn.Sequential(
            nn.Linear(degradation_dim, hidden),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(hidden, n_domains),
        )
        self.content_net = nn.Sequential(
            nn.Linear(content_channels, hidden),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Linear(hidden, n_domains),
        )

    def degradation_logits(self, z_deg):
        return self.deg_net(z_deg)

    def content_logits(self, z_content):
        pooled = z_content.mean(dim=(2, 3)) if z_content.dim() == 4 else z_content
        return self.content_net(pooled)


class DeskFeatureExtractor(nn.Module):
    """Hermetic frozen perceptual extractor: the raw image plus two fixed
    random conv layers, seeded so tests are reproducible. A pretrained network
    can be swapped in through the same interface (a module returning a list of
    feature maps)."""

    def __init__(self, seed=0, channels=(8, 16)):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        convs = []
        cin = 3
        for cout in channels:
            conv = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(
                    torch.randn(conv.weight.shape, generator=gen) / (3.0 * cin ** 0.5)
                )
                conv.bias.zero_()
            convs.append(conv)
            cin = cout
        self.convs = nn.ModuleList(convs)
        self.act = nn.LeakyReLU(0.2)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        feats = [x]
        h = x
        for conv in self.convs:
            h = self.act(conv(h))
            feats.append(h)
        return feats


class IdentityExtractor(nn.Module):
    """Single-layer extractor returning the image itself (plain L1 perceptual)."""

    def forward(self, x):
        return [x]
