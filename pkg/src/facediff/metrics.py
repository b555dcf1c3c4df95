"""Full-reference image metrics: PSNR, SSIM, and a Fréchet feature distance
with a pluggable (fixed-seed random) convolutional embedder.

All metrics operate on float images in [0, 1]; the PSNR dynamic range is
therefore 1.0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
from scipy.ndimage import convolve

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

# Rec. 601 luma weights for RGB -> luminance
_LUMA = np.array([0.299, 0.587, 0.114])


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB on unit dynamic range; inf if equal."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def _to_luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ _LUMA
    if img.ndim == 2:
        return img
    raise ValueError(f"expected H x W or H x W x 3 image, got shape {img.shape}")


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Windowed SSIM with an 11x11 Gaussian window (sigma 1.5) on luminance."""
    if np.asarray(a).shape != np.asarray(b).shape:
        raise ValueError(f"shape mismatch: {np.asarray(a).shape} vs {np.asarray(b).shape}")
    x = _to_luma(a)
    y = _to_luma(b)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(
            f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    k = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    mode = {"mode": "constant", "cval": 0.0}
    # valid-region trick: convolve zero-padded then crop to the valid interior
    pad = SSIM_WINDOW // 2
    mu_x = convolve(x, k, **mode)[pad:-pad, pad:-pad]
    mu_y = convolve(y, k, **mode)[pad:-pad, pad:-pad]
    xx = convolve(x * x, k, **mode)[pad:-pad, pad:-pad]
    yy = convolve(y * y, k, **mode)[pad:-pad, pad:-pad]
    xy = convolve(x * y, k, **mode)[pad:-pad, pad:-pad]
    var_x = xx - mu_x**2
    var_y = yy - mu_y**2
    cov = xy - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_x**2 + mu_y**2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(np.mean(num / den))


class FeatureExtractor(nn.Module):
    """Fixed-seed random convolutional embedder standing in for a pretrained
    feature network. Deterministic for a given (seed, dim)."""

    def __init__(self, dim: int = 64, seed: int = 1234):
        super().__init__()
        self.dim = dim
        self.seed = seed
        gen = torch.Generator().manual_seed(seed)
        self.conv1 = nn.Conv2d(3, 16, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(16, 32, 3, stride=2, padding=1)
        self.proj = nn.Linear(32 * 2, dim)
        for p in self.parameters():
            with torch.no_grad():
                p.copy_(torch.randn(p.shape, generator=gen) * 0.2)
            p.requires_grad_(False)

    @torch.no_grad()
    def embed(self, image: np.ndarray) -> np.ndarray:
        x = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))
        x = x.permute(2, 0, 1)[None]
        h = torch.tanh(self.conv1(x))
        h = torch.tanh(self.conv2(h))
        stats = torch.cat([h.mean(dim=(2, 3)), h.std(dim=(2, 3), unbiased=False)], dim=1)
        return self.proj(stats)[0].numpy().astype(np.float64)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric matrix square root, negative eigenvalues clamped to zero."""
    sym = (m + m.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    vals = np.clip(vals, 0.0, None)
    return vecs @ np.diag(np.sqrt(vals)) @ vecs.T


def frechet_distance(mu_a, sigma_a, mu_b, sigma_b) -> float:
    """Fréchet distance between two Gaussians."""
    diff = mu_a - mu_b
    sqrt_a = _psd_sqrt(sigma_a)
    inner = _psd_sqrt(sqrt_a @ sigma_b @ sqrt_a)
    val = float(diff @ diff + np.trace(sigma_a) + np.trace(sigma_b) - 2.0 * np.trace(inner))
    return max(val, 0.0)


def feature_fid(set_a: list[np.ndarray], set_b: list[np.ndarray], fx: FeatureExtractor) -> float:
    """Fréchet distance between embedding statistics of two image corpora."""
    for name, s in (("A", set_a), ("B", set_b)):
        if len(s) < fx.dim + 1:
            raise ValueError(
                f"corpus {name} has {len(s)} images; need >= {fx.dim + 1} "
                f"for a nondegenerate covariance"
            )
    ea = np.stack([fx.embed(im) for im in set_a])
    eb = np.stack([fx.embed(im) for im in set_b])
    mu_a, mu_b = ea.mean(axis=0), eb.mean(axis=0)
    sigma_a = np.cov(ea, rowvar=False)
    sigma_b = np.cov(eb, rowvar=False)
    return frechet_distance(mu_a, sigma_a, mu_b, sigma_b)


@dataclass
class MetricReport:
    """Per-image and aggregate metric results for one evaluation run."""

    names: list[str]
    psnr_values: list[float]
    ssim_values: list[float]
    fid: float
    config_hash: str
    seed: int
    extras: dict = field(default_factory=dict)

    @property
    def mean_psnr(self) -> float:
        finite = [v for v in self.psnr_values if math.isfinite(v)]
        return float(np.mean(finite)) if finite else float("inf")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_values))

    def to_dict(self) -> dict:
        return {
            "names": self.names,
            "psnr": [v if math.isfinite(v) else "inf" for v in self.psnr_values],
            "ssim": self.ssim_values,
            "fid": self.fid,
            "mean_psnr": self.mean_psnr if math.isfinite(self.mean_psnr) else "inf",
            "mean_ssim": self.mean_ssim,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "extras": self.extras,
        }
