"""Deterministic latent sampler.

Runs the eta=0 update over a uniformly strided subset of schedule steps:
each step forms the clean-latent estimate from the predicted noise and
re-noises it to the previous selected step. The final step returns the
clean estimate itself. Everything is a pure function of (weights, inputs,
seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .codec import MODEL_LATENT_RANGE
from .models import ControlAdapter, Denoiser
from .schedule import NoiseSchedule, predict_z0


@dataclass(frozen=True)
class ControlSource:
    """Bundles an adapter with its degraded conditioning image.

    The adapter's features depend on the current noisy latent and step,
    so they are recomputed at every sampler step.
    """

    adapter: ControlAdapter
    degraded: torch.Tensor  # (B, 3, H, W)

    def features(self, z_t: torch.Tensor, t: torch.Tensor):
        return self.adapter(self.degraded, z_t, t, tags=[])


def select_steps(T: int, num_steps: int) -> list[int]:
    """Uniformly strided descending step indices, always ending at 0."""
    if not (1 <= num_steps <= T):
        raise ValueError(f"num_steps must lie in [1, {T}], got {num_steps}")
    if num_steps == 1:
        return [T - 1]
    idx = np.linspace(T - 1, 0, num_steps)
    return [int(round(i)) for i in idx]


def sample(
    denoiser: Denoiser,
    condition: ControlSource | None,
    s: NoiseSchedule,
    num_steps: int,
    seed: int,
    shape: tuple[int, int, int] = (192, 8, 8),
) -> torch.Tensor:
    """Draw a latent from the model, optionally steered by control features."""
    steps = select_steps(s.T, num_steps)
    rng = np.random.default_rng(seed)
    z = torch.from_numpy(rng.standard_normal(shape).astype(np.float32))[None]
    with torch.no_grad():
        for i, t in enumerate(steps):
            tt = torch.tensor([t], dtype=torch.long)
            z = z.float()
            ctrl = condition.features(z, tt) if condition is not None else None
            eps_hat = denoiser(z, tt, tags=[], ctrl=ctrl)
            z0_pred = predict_z0(z, eps_hat, t, s)
            if i + 1 < len(steps):
                # intermediate clean estimates are clamped to the latent's
                # valid range (codec latents are pixel-valued); without this
                # the 1/sqrt(alpha_prod) factor compounds model error across
                # steps. The final step returns the raw estimate.
                lo, hi = MODEL_LATENT_RANGE
                z0_pred = z0_pred.clamp(lo, hi)
                t_prev = steps[i + 1]
                a_t = math.sqrt(s.alpha_prod[t])
                b_t = math.sqrt(s.beta_prod[t])
                a_p = math.sqrt(s.alpha_prod[t_prev])
                b_p = math.sqrt(s.beta_prod[t_prev])
                # re-noise with the residual implied by the clamped estimate,
                # not the raw eps_hat, so the update stays self-consistent
                z = a_p * z0_pred + (b_p / b_t) * (z - a_t * z0_pred)
            else:
                z = z0_pred
    return z[0].float()
