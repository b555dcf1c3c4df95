"""End-to-end restoration: degraded image -> restored image."""

from __future__ import annotations

import numpy as np
import torch

from . import codec
from .models import ControlAdapter, Denoiser
from .sampler import ControlSource, sample
from .schedule import NoiseSchedule


def restore(
    degraded: np.ndarray,
    denoiser: Denoiser,
    adapter: ControlAdapter,
    schedule: NoiseSchedule,
    num_steps: int,
    seed: int,
) -> np.ndarray:
    """Sample a clean latent conditioned on the degraded image and decode it."""
    h, w = degraded.shape[:2]
    if h % codec.SPATIAL_FACTOR or w % codec.SPATIAL_FACTOR:
        raise ValueError(
            f"image sides must be divisible by {codec.SPATIAL_FACTOR}, got {h}x{w}"
        )
    cond = torch.from_numpy(
        np.ascontiguousarray(degraded, dtype=np.float32).transpose(2, 0, 1)
    )[None]
    source = ControlSource(adapter=adapter, degraded=cond)
    shape = (codec.LATENT_CHANNELS, h // codec.SPATIAL_FACTOR, w // codec.SPATIAL_FACTOR)
    z = sample(denoiser, source, schedule, num_steps, seed, shape=shape)
    img = codec.decode_from_model(z)
    return np.clip(img, 0.0, 1.0)
