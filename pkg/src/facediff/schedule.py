"""Noise schedules and the closed-form diffusion operations built on them.

The forward process is the standard variance-preserving one:

    z_t = sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps

with abar_t the cumulative product of per-step decay factors. The clean
latent is recovered from a noise prediction by inverting that identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

# alpha_prod below this is treated as numerically degenerate in predict_z0
_ALPHA_PROD_FLOOR = 1e-12


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step betas plus the cumulative quantities derived from them.

    ``beta_prod`` is defined as ``1 - alpha_prod`` (the complement of the
    cumulative alpha product), which is the quantity that makes
    ``predict_z0`` the exact inverse of ``add_noise``.
    """

    T: int
    beta: np.ndarray
    alpha: np.ndarray = field(init=False)
    alpha_prod: np.ndarray = field(init=False)
    beta_prod: np.ndarray = field(init=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if self.T < 1:
            raise ValueError(f"step count must be >= 1, got {self.T}")
        if beta.shape != (self.T,):
            raise ValueError(f"beta must have shape ({self.T},), got {beta.shape}")
        if np.any(beta <= 0.0) or np.any(beta >= 1.0):
            raise ValueError("every beta must lie strictly inside (0, 1)")
        alpha = 1.0 - beta
        alpha_prod = np.cumprod(alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_prod", alpha_prod)
        object.__setattr__(self, "beta_prod", 1.0 - alpha_prod)

    def check_t(self, t: int) -> int:
        if not (0 <= int(t) < self.T):
            raise ValueError(f"timestep {t} outside [0, {self.T})")
        return int(t)


def make_schedule(
    T: int,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    kind: str = "linear",
) -> NoiseSchedule:
    """Build a noise schedule with ``T`` steps.

    Only the linear beta interpolation is supported.
    """
    if T < 1:
        raise ValueError(f"step count must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"betas must satisfy 0 < beta_start <= beta_end < 1, "
            f"got ({beta_start}, {beta_end})"
        )
    if kind != "linear":
        raise ValueError(f"unknown schedule kind {kind!r}")
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    return NoiseSchedule(T=T, beta=beta)


def _check_same_shape(a: torch.Tensor, b: torch.Tensor):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def add_noise(z0: torch.Tensor, eps: torch.Tensor, t: int, s: NoiseSchedule) -> torch.Tensor:
    """Noise a clean latent to step ``t`` with the given Gaussian draw.

    Computed and returned at double precision so that ``predict_z0`` is an
    exact inverse even at late steps, where the 1/sqrt(alpha_prod) factor
    would otherwise amplify single-precision rounding of z_t.
    """
    _check_same_shape(z0, eps)
    t = s.check_t(t)
    a = math.sqrt(s.alpha_prod[t])
    b = math.sqrt(s.beta_prod[t])
    return a * z0.double() + b * eps.double()


def predict_z0(z_t: torch.Tensor, eps_hat: torch.Tensor, t: int, s: NoiseSchedule) -> torch.Tensor:
    """Closed-form estimate of the clean latent from a noise prediction."""
    _check_same_shape(z_t, eps_hat)
    t = s.check_t(t)
    ap = s.alpha_prod[t]
    if ap < _ALPHA_PROD_FLOOR:
        raise FloatingPointError(
            f"alpha_prod[{t}]={ap:.3e} below {_ALPHA_PROD_FLOOR}; refusing division"
        )
    return (z_t.double() - math.sqrt(s.beta_prod[t]) * eps_hat.double()) / math.sqrt(ap)


def noise_mse(eps: torch.Tensor, eps_hat: torch.Tensor) -> torch.Tensor:
    """Mean squared elementwise difference between added and predicted noise."""
    _check_same_shape(eps, eps_hat)
    return ((eps - eps_hat) ** 2).mean()
