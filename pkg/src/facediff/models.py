"""Toy latent denoiser and the zero-initialized control adapter.

The denoiser is a small UNet over codec latents with sinusoidal time
embeddings and a learned embedding per vocabulary tag (averaged over the
tags present; the empty tag set selects a dedicated null embedding).

The adapter is a value-copy of the denoiser's encoder half plus a
conditioning stack that maps the degraded RGB image down to latent
resolution. Its outputs enter the base UNet through one zero-initialized
1x1 convolution per injection site, so a fresh adapter is an exact no-op.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .codec import LATENT_CHANNELS, SPATIAL_FACTOR
from .vocab import VOCABULARY, tag_indices


@dataclass(frozen=True)
class DenoiserConfig:
    base_channels: int = 64
    levels: int = 3
    time_dim: int = 128
    vocab: tuple[str, ...] = field(default=VOCABULARY)

    @property
    def channel_mult(self) -> tuple[int, ...]:
        return tuple(min(2**i, 4) for i in range(self.levels))


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard transformer-style sinusoidal embedding of integer steps."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32) / (half - 1)
    )
    args = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class ResBlock(nn.Module):
    """Two 3x3 convolutions with a FiLM-style additive time conditioning."""

    def __init__(self, channels: int, emb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, channels)
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, channels)
        self.norm2 = nn.GroupNorm(8, channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.SiLU()

    def forward(self, x, emb):
        h = self.conv1(self.act(self.norm1(x)))
        h = h + self.emb_proj(emb)[:, :, None, None]
        h = self.conv2(self.act(self.norm2(h)))
        return x + h


class _EncoderHalf(nn.Module):
    """Input conv, per-level residual blocks with downsampling, bottleneck.

    Returns one feature map per injection site: each encoder level plus
    the bottleneck.
    """

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        chans = [cfg.base_channels * m for m in cfg.channel_mult]
        self.in_conv = nn.Conv2d(LATENT_CHANNELS, chans[0], 3, padding=1)
        self.blocks = nn.ModuleList(
            [ResBlock(c, cfg.time_dim) for c in chans]
        )
        self.downs = nn.ModuleList(
            [nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1) for i in range(len(chans) - 1)]
        )
        self.mid = ResBlock(chans[-1], cfg.time_dim)
        self.chans = chans

    def forward(self, z, emb, extra=None):
        h = self.in_conv(z)
        if extra is not None:
            h = h + extra
        feats = []
        for i, block in enumerate(self.blocks):
            h = block(h, emb)
            feats.append(h)
            if i < len(self.downs):
                h = self.downs[i](h)
        feats.append(self.mid(h, emb))
        return feats


class Denoiser(nn.Module):
    """UNet noise predictor over codec latents with tag conditioning."""

    def __init__(self, cfg: DenoiserConfig | None = None):
        super().__init__()
        self.cfg = cfg or DenoiserConfig()
        cfg = self.cfg
        chans = [cfg.base_channels * m for m in cfg.channel_mult]
        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.time_dim, cfg.time_dim),
            nn.SiLU(),
            nn.Linear(cfg.time_dim, cfg.time_dim),
        )
        # last row is the null-prompt embedding
        self.tag_embed = nn.Embedding(len(cfg.vocab) + 1, cfg.time_dim)
        self.encoder = _EncoderHalf(cfg)
        self.dec_blocks = nn.ModuleList(
            [ResBlock(c, cfg.time_dim) for c in reversed(chans)]
        )
        self.ups = nn.ModuleList(
            [
                nn.ConvTranspose2d(chans[i + 1], chans[i], 4, stride=2, padding=1)
                for i in reversed(range(len(chans) - 1))
            ]
        )
        self.out_norm = nn.GroupNorm(8, chans[0])
        self.out_conv = nn.Conv2d(chans[0], LATENT_CHANNELS, 3, padding=1)
        # long skip: the latent has more channels (192) than the UNet trunk,
        # so a 1x1 path from input to output carries what the trunk cannot
        self.skip_conv = nn.Conv2d(LATENT_CHANNELS, LATENT_CHANNELS, 1)
        # identity start: at high noise the optimal eps estimate is close to
        # the input itself, so begin from that fixed point
        nn.init.zeros_(self.skip_conv.bias)
        with torch.no_grad():
            self.skip_conv.weight.copy_(
                torch.eye(LATENT_CHANNELS).reshape(LATENT_CHANNELS, LATENT_CHANNELS, 1, 1)
            )
        self.act = nn.SiLU()
        self.frozen = False

    @property
    def null_index(self) -> int:
        return len(self.cfg.vocab)

    def _tag_embedding(self, tags: list[str]) -> torch.Tensor:
        if tags:
            idx = torch.tensor(tag_indices(tags), dtype=torch.long)
        else:
            idx = torch.tensor([self.null_index], dtype=torch.long)
        return self.tag_embed(idx).mean(dim=0)

    def embed_condition(self, t: torch.Tensor, tags) -> torch.Tensor:
        """``tags`` is one tag list shared by the batch, or one list per sample."""
        emb = self.time_mlp(sinusoidal_embedding(t, self.cfg.time_dim))
        if tags and isinstance(tags[0], (list, tuple)):
            tag_emb = torch.stack([self._tag_embedding(tl) for tl in tags])
        else:
            tag_emb = self._tag_embedding(tags)[None]
        return emb + tag_emb

    def forward(self, z_t, t, tags=None, ctrl=None):
        """Predict the noise component of a batched (B, C, H, W) latent."""
        div = 2 ** (self.cfg.levels - 1)
        if z_t.shape[-2] % div or z_t.shape[-1] % div:
            raise ValueError(
                f"latent sides must be divisible by {div} for {self.cfg.levels} "
                f"levels, got {tuple(z_t.shape[-2:])}"
            )
        tags = tags or []
        emb = self.embed_condition(t, tags)
        feats = self.encoder(z_t, emb)
        if ctrl is not None:
            if len(ctrl) != len(feats):
                raise ValueError(
                    f"expected {len(feats)} control features, got {len(ctrl)}"
                )
            feats = [f + c for f, c in zip(feats, ctrl)]
        *skips, h = feats
        for i, block in enumerate(self.dec_blocks):
            h = block(h + skips[-1 - i], emb)
            if i < len(self.ups):
                h = self.ups[i](h)
        return self.out_conv(self.act(self.out_norm(h))) + self.skip_conv(z_t)

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.frozen = True
        return self


class _CondStack(nn.Module):
    """Maps a degraded RGB image to latent-resolution features (factor 8)."""

    def __init__(self, out_channels: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(32, out_channels, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(out_channels, out_channels, 3, padding=1),
        )

    def forward(self, rgb):
        return self.net(rgb)


class ControlAdapter(nn.Module):
    """Trainable encoder copy fed by the degraded image, fused via zero convs."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        chans = [cfg.base_channels * m for m in cfg.channel_mult]
        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.time_dim, cfg.time_dim),
            nn.SiLU(),
            nn.Linear(cfg.time_dim, cfg.time_dim),
        )
        self.tag_embed = nn.Embedding(len(cfg.vocab) + 1, cfg.time_dim)
        self.encoder = _EncoderHalf(cfg)
        self.cond_stack = _CondStack(chans[0])
        self.zero_convs = nn.ModuleList(
            [nn.Conv2d(c, c, 1) for c in chans + [chans[-1]]]
        )
        for zc in self.zero_convs:
            nn.init.zeros_(zc.weight)
            nn.init.zeros_(zc.bias)

    @property
    def null_index(self) -> int:
        return len(self.cfg.vocab)

    def forward(self, degraded, z_t, t, tags=None):
        """Control features, one per injection site of the base UNet."""
        tags = tags or []
        emb = self.time_mlp(sinusoidal_embedding(t, self.cfg.time_dim))
        if tags:
            idx = torch.tensor(tag_indices(tags), dtype=torch.long)
        else:
            idx = torch.tensor([self.null_index], dtype=torch.long)
        emb = emb + self.tag_embed(idx).mean(dim=0, keepdim=True)
        cond = self.cond_stack(degraded)
        if cond.shape[-2:] != z_t.shape[-2:]:
            raise ValueError(
                f"degraded image maps to {tuple(cond.shape[-2:])} but latent is "
                f"{tuple(z_t.shape[-2:])}; sizes must agree under factor {SPATIAL_FACTOR}"
            )
        feats = self.encoder(z_t, emb, extra=cond)
        return [zc(f) for zc, f in zip(self.zero_convs, feats)]


def init_adapter_from_denoiser(d: Denoiser) -> ControlAdapter:
    """Build an adapter whose encoder half is a value copy of the denoiser's."""
    a = ControlAdapter(d.cfg)
    a.encoder.load_state_dict(copy.deepcopy(d.encoder.state_dict()))
    a.time_mlp.load_state_dict(copy.deepcopy(d.time_mlp.state_dict()))
    a.tag_embed.load_state_dict(copy.deepcopy(d.tag_embed.state_dict()))
    for zc in a.zero_convs:
        nn.init.zeros_(zc.weight)
        nn.init.zeros_(zc.bias)
    return a


def _as_batch(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if x.dim() == 3:
        return x[None], True
    return x, False


def denoise(d: Denoiser, z_t: torch.Tensor, t: int, tags=None, ctrl=None) -> torch.Tensor:
    """Single-latent convenience wrapper around :meth:`Denoiser.forward`."""
    zb, squeeze = _as_batch(z_t)
    tt = torch.tensor([int(t)], dtype=torch.long)
    if ctrl is not None:
        ctrl = [c if c.dim() == 4 else c[None] for c in ctrl]
    out = d(zb, tt, tags=tags, ctrl=ctrl)
    return out[0] if squeeze else out


def control_features(a: ControlAdapter, degraded: np.ndarray | torch.Tensor, z_t: torch.Tensor, t: int, tags=None):
    """Single-latent convenience wrapper around :meth:`ControlAdapter.forward`."""
    if isinstance(degraded, np.ndarray):
        degraded = torch.from_numpy(np.ascontiguousarray(degraded, dtype=np.float32)).permute(2, 0, 1)
    zb, squeeze = _as_batch(z_t)
    db, _ = _as_batch(degraded)
    tt = torch.tensor([int(t)], dtype=torch.long)
    feats = a(db, zb, tt, tags=tags)
    return [f[0] for f in feats] if squeeze else feats
