"""Regional facial losses: patch discriminators, Gram-style matching, and
the time-weighted combination used on the predicted clean latent.

For each region (eyes, mouth) the loss is

    Weight(t) * ( lambda_d * mean[log(1 - D(p_pred))]
                + lambda_s * sum_scales |Gram(psi(p_pred)) - Gram(psi(p))|_1 )

summed over regions. psi are the discriminator's post-activation feature
maps; gradients flow only through the predicted patch.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .codec import LATENT_CHANNELS
from .regions import RegionBoxes, TimeWeightParams, crop_regions, time_weight

PROB_CLAMP = 1e-6


def gram(features: torch.Tensor) -> torch.Tensor:
    """Channel Gram matrix of a (C, H, W) feature map, normalized by H*W."""
    if features.dim() != 3:
        raise ValueError(f"expected (C, H, W) feature map, got shape {tuple(features.shape)}")
    c, h, w = features.shape
    if h * w < 1:
        raise ValueError("empty feature map")
    flat = features.reshape(c, h * w)
    return flat @ flat.t() / (h * w)


class PatchDiscriminator(nn.Module):
    """Small convolutional real/fake classifier over one latent region.

    Exposes its post-activation feature maps as the multi-scale features
    used by the style term.
    """

    def __init__(self, in_channels: int = LATENT_CHANNELS, width: int = 32):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, width * 2, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(width * 2, width * 2, 1)
        self.act = nn.LeakyReLU(0.2)

    def features(self, patch: torch.Tensor) -> list[torch.Tensor]:
        x = patch if patch.dim() == 4 else patch[None]
        f1 = self.act(self.conv1(x))
        f2 = self.act(self.conv2(f1))
        f3 = self.act(self.conv3(f2))
        feats = [f1, f2, f3]
        if patch.dim() == 3:
            feats = [f[0] for f in feats]
        return feats

    def forward(self, patch: torch.Tensor) -> torch.Tensor:
        """Per-patch probability of being a real region, clamped into (0, 1)."""
        feats = self.features(patch)
        logits = feats[-1].mean(dim=(-3, -2, -1))
        p = torch.sigmoid(logits)
        return p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)


class RegionDiscriminators(nn.Module):
    """One discriminator per facial region."""

    def __init__(self, in_channels: int = LATENT_CHANNELS, width: int = 32):
        super().__init__()
        self.eyes = PatchDiscriminator(in_channels, width)
        self.mouth = PatchDiscriminator(in_channels, width)

    def by_region(self):
        return (("eyes", self.eyes), ("mouth", self.mouth))


def style_distance(d: PatchDiscriminator, p_pred: torch.Tensor, p_real: torch.Tensor) -> torch.Tensor:
    """L1 distance between Gram matrices across all discriminator scales."""
    total = p_pred.new_zeros(())
    for f_pred, f_real in zip(d.features(p_pred), d.features(p_real)):
        total = total + (gram(f_pred) - gram(f_real)).abs().sum()
    return total


def facial_loss(
    z0_pred: torch.Tensor,
    z0: torch.Tensor,
    boxes: RegionBoxes,
    t_norm: float,
    discriminators: RegionDiscriminators,
    p: TimeWeightParams,
    lambda_d: float = 0.1,
    lambda_s: float = 1.0,
) -> torch.Tensor:
    """Time-weighted adversarial + style loss over eye/mouth latent crops.

    Gradient flows only through ``z0_pred``; the reference latent is
    detached here and discriminator parameters are updated separately.
    """
    weight = time_weight(t_norm, p)
    pred_eyes, pred_mouth = crop_regions(z0_pred, boxes)
    real_eyes, real_mouth = crop_regions(z0.detach(), boxes)
    total = z0_pred.new_zeros(())
    pairs = (
        (discriminators.eyes, pred_eyes, real_eyes),
        (discriminators.mouth, pred_mouth, real_mouth),
    )
    for d, p_pred, p_real in pairs:
        adv = torch.log(1.0 - d(p_pred)).mean()
        sty = style_distance(d, p_pred, p_real)
        total = total + weight * (lambda_d * adv + lambda_s * sty)
    if not torch.isfinite(total):
        raise FloatingPointError("facial loss is non-finite")
    return total


def discriminator_step(
    discriminators: RegionDiscriminators,
    real_patches: dict[str, torch.Tensor],
    fake_patches: dict[str, torch.Tensor],
    optimizer: torch.optim.Optimizer | None = None,
) -> torch.Tensor:
    """Binary cross-entropy update: real patches toward 1, fakes toward 0.

    ``real_patches`` / ``fake_patches`` map region name to a patch batch.
    Fake patches must already be detached from the generator graph. When
    an optimizer is given it must hold only discriminator parameters.
    """
    if set(real_patches) != set(fake_patches):
        raise ValueError(
            f"region mismatch: {sorted(real_patches)} vs {sorted(fake_patches)}"
        )
    known = dict(discriminators.by_region())
    loss = None
    for region in real_patches:
        if region not in known:
            raise ValueError(f"unknown region {region!r}")
        d = known[region]
        term = -torch.log(d(real_patches[region])).mean()
        term = term - torch.log(1.0 - d(fake_patches[region])).mean()
        loss = term if loss is None else loss + term
    if optimizer is not None:
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    return loss.detach() if optimizer is not None else loss


def total_loss(noise_term, facial_term):
    """The full training objective: noise prediction plus facial term."""
    return noise_term + facial_term
