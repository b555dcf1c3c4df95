"""Synthetic degradation for training pairs.

Fixed order: Gaussian blur -> bicubic downscale -> additive Gaussian
noise -> JPEG round-trip -> bicubic upscale back to the input size.
Each stage is skipped at its identity setting so the identity parameter
set reproduces the input exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

LOSSLESS = 0  # sentinel jpeg_quality meaning "skip JPEG"


@dataclass(frozen=True)
class DegradationParams:
    blur_sigma: float = 0.0
    downscale: float = 1.0
    noise_sigma: float = 0.0       # on the [0, 255] scale
    jpeg_quality: int = LOSSLESS   # 1..100, or LOSSLESS to skip

    def __post_init__(self):
        if self.blur_sigma < 0:
            raise ValueError(f"blur_sigma must be >= 0, got {self.blur_sigma}")
        if self.downscale < 1:
            raise ValueError(f"downscale must be >= 1, got {self.downscale}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.jpeg_quality != LOSSLESS and not (1 <= self.jpeg_quality <= 100):
            raise ValueError(f"jpeg_quality must be 1..100 or lossless, got {self.jpeg_quality}")

    def to_dict(self) -> dict:
        return {
            "blur_sigma": self.blur_sigma,
            "downscale": self.downscale,
            "noise_sigma": self.noise_sigma,
            "jpeg_quality": self.jpeg_quality,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DegradationParams":
        return cls(**d)


def degrade(image: np.ndarray, params: DegradationParams, seed: int) -> np.ndarray:
    """Apply the blur/downsample/noise/JPEG/upsample chain to a [0,1] image."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got shape {img.shape}")
    h, w = img.shape[:2]
    p = params

    if p.blur_sigma > 0:
        k = 2 * int(np.ceil(3 * p.blur_sigma)) + 1
        img = cv2.GaussianBlur(img, (k, k), p.blur_sigma)
    if p.downscale > 1:
        dh = max(1, int(round(h / p.downscale)))
        dw = max(1, int(round(w / p.downscale)))
        img = cv2.resize(img, (dw, dh), interpolation=cv2.INTER_CUBIC)
    if p.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        img = img + rng.standard_normal(img.shape).astype(np.float32) * (p.noise_sigma / 255.0)
    if p.jpeg_quality != LOSSLESS:
        u8 = np.clip(img * 255.0, 0, 255).astype(np.uint8)
        ok, buf = cv2.imencode(".jpg", cv2.cvtColor(u8, cv2.COLOR_RGB2BGR),
                               [cv2.IMWRITE_JPEG_QUALITY, int(p.jpeg_quality)])
        if not ok:
            raise RuntimeError("JPEG encoding failed")
        dec = cv2.imdecode(buf, cv2.IMREAD_COLOR)
        img = cv2.cvtColor(dec, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0
    if img.shape[:2] != (h, w):
        img = cv2.resize(img, (w, h), interpolation=cv2.INTER_CUBIC)
    return np.clip(img, 0.0, 1.0)


@dataclass(frozen=True)
class DegradationRanges:
    """Uniform sampling ranges for each degradation field."""

    blur_sigma: tuple[float, float] = (0.2, 10.0)
    downscale: tuple[float, float] = (1.0, 8.0)
    noise_sigma: tuple[float, float] = (0.0, 20.0)
    jpeg_quality: tuple[int, int] = (60, 100)

    def __post_init__(self):
        for name in ("blur_sigma", "downscale", "noise_sigma", "jpeg_quality"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"empty range for {name}: ({lo}, {hi})")


def sample_degradation(rng: np.random.Generator, ranges: DegradationRanges | None = None) -> DegradationParams:
    """Draw independent uniform degradation parameters."""
    r = ranges or DegradationRanges()
    return DegradationParams(
        blur_sigma=float(rng.uniform(*r.blur_sigma)),
        downscale=float(rng.uniform(*r.downscale)),
        noise_sigma=float(rng.uniform(*r.noise_sigma)),
        jpeg_quality=int(rng.integers(r.jpeg_quality[0], r.jpeg_quality[1] + 1)),
    )
