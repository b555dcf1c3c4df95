"""Invertible pixel <-> latent codec.

A space-to-depth rearrangement with a fixed spatial factor of 8: an
H x W x 3 image in [0, 1] maps losslessly to a (192, H/8, W/8) latent.
The factor-8 geometry is what the landmark-to-latent region mapping
relies on, so both directions are bit-exact.
"""

from __future__ import annotations

import numpy as np
import torch

SPATIAL_FACTOR = 8
LATENT_CHANNELS = 3 * SPATIAL_FACTOR * SPATIAL_FACTOR  # 192

# Diffusion operates on standardized latents: (z - OFFSET) * SCALE maps the
# pixel-valued codec output to roughly unit variance, like the scaling
# factor applied to pretrained-VAE latents. The exact bijection below is
# unaffected; only the model-space helpers apply the affine.
LATENT_OFFSET = 0.5
LATENT_SCALE = 4.0
MODEL_LATENT_RANGE = (-LATENT_OFFSET * LATENT_SCALE, (1.0 - LATENT_OFFSET) * LATENT_SCALE)


def encode(image: np.ndarray) -> torch.Tensor:
    """Rearrange an H x W x 3 float image into a (192, H/8, W/8) latent."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got shape {image.shape}")
    h, w, _ = image.shape
    f = SPATIAL_FACTOR
    if h % f or w % f:
        raise ValueError(f"image sides must be divisible by {f}, got {h}x{w}")
    # (H/f, f, W/f, f, 3) -> (3, f, f, H/f, W/f) -> (192, H/f, W/f)
    if not np.issubdtype(image.dtype, np.floating):
        raise ValueError(f"expected a float image in [0, 1], got dtype {image.dtype}")
    x = image.reshape(h // f, f, w // f, f, 3)
    x = x.transpose(4, 1, 3, 0, 2).reshape(LATENT_CHANNELS, h // f, w // f)
    return torch.from_numpy(np.ascontiguousarray(x))


def decode(latent: torch.Tensor) -> np.ndarray:
    """Exact inverse of :func:`encode`."""
    z = latent.detach().cpu().numpy()
    if z.ndim != 3 or z.shape[0] != LATENT_CHANNELS:
        raise ValueError(f"expected ({LATENT_CHANNELS}, h, w) latent, got shape {z.shape}")
    _, lh, lw = z.shape
    f = SPATIAL_FACTOR
    x = z.reshape(3, f, f, lh, lw)
    x = x.transpose(3, 1, 4, 2, 0).reshape(lh * f, lw * f, 3)
    return np.ascontiguousarray(x)


def encode_for_model(image: np.ndarray) -> torch.Tensor:
    """Encode and standardize for the denoiser's latent space."""
    return (encode(image) - LATENT_OFFSET) * LATENT_SCALE


def decode_from_model(latent: torch.Tensor) -> np.ndarray:
    """Invert :func:`encode_for_model` (up to float rounding) and decode."""
    return decode(latent / LATENT_SCALE + LATENT_OFFSET)
