"""Time weighting and landmark-driven latent region extraction.

The time weight is a logit-normal density over the normalized timestep,
peaking at intermediate steps. Eye/mouth pixel landmarks are mapped to
fixed-size latent rectangles through the codec's factor-8 downsampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .codec import SPATIAL_FACTOR


@dataclass(frozen=True)
class TimeWeightParams:
    """Location/scale of the logit-normal weight plus endpoint handling.

    ``logit_convention`` selects between the usual log-odds
    log(t/(1-t)) and the symmetric variant -log(t(1-t)).
    """

    m: float = -0.5
    s: float = 1.0
    logit_convention: str = "standard"
    t_clip: float = 1e-3

    def __post_init__(self):
        if self.s <= 0:
            raise ValueError(f"scale parameter must be positive, got {self.s}")
        if self.logit_convention not in ("standard", "symmetric"):
            raise ValueError(f"unknown logit convention {self.logit_convention!r}")
        if not (0.0 < self.t_clip < 0.5):
            raise ValueError(f"t_clip must lie in (0, 0.5), got {self.t_clip}")


def time_weight(t_norm: float, p: TimeWeightParams) -> float:
    """Logit-normal weight at a normalized timestep in (0, 1)."""
    t = min(max(float(t_norm), p.t_clip), 1.0 - p.t_clip)
    if p.logit_convention == "standard":
        logit = math.log(t / (1.0 - t))
    else:
        logit = -math.log(t * (1.0 - t))
    dens = 1.0 / (p.s * math.sqrt(2.0 * math.pi))
    dens *= 1.0 / (t * (1.0 - t))
    dens *= math.exp(-((logit - p.m) ** 2) / (2.0 * p.s * p.s))
    return dens


def normalize_timestep(t: int, T: int, t_clip: float = 1e-3) -> float:
    """Map an integer step in [0, T) to (0, 1), clipped away from the poles."""
    t_norm = (t + 0.5) / T
    return min(max(t_norm, t_clip), 1.0 - t_clip)


@dataclass(frozen=True)
class LandmarkSet:
    """Pixel-space (x, y) coordinates of the two eye centers and the mouth."""

    left_eye: tuple[float, float]
    right_eye: tuple[float, float]
    mouth: tuple[float, float]

    def validate(self, image_size: tuple[int, int]) -> "LandmarkSet":
        h, w = image_size
        for name, (x, y) in self.items():
            if not (0 <= x < w and 0 <= y < h):
                raise ValueError(f"{name} landmark ({x}, {y}) outside {w}x{h} image")
        if not (self.left_eye[1] < self.mouth[1] and self.right_eye[1] < self.mouth[1]):
            raise ValueError("eyes must lie strictly above the mouth")
        return self

    def items(self):
        return (
            ("left_eye", self.left_eye),
            ("right_eye", self.right_eye),
            ("mouth", self.mouth),
        )

    def to_dict(self) -> dict:
        return {
            "left_eye": list(self.left_eye),
            "right_eye": list(self.right_eye),
            "mouth": list(self.mouth),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LandmarkSet":
        return cls(
            left_eye=tuple(d["left_eye"]),
            right_eye=tuple(d["right_eye"]),
            mouth=tuple(d["mouth"]),
        )


@dataclass(frozen=True)
class RegionBoxes:
    """Latent-space crop rectangles (x0, y0, x1, y1), half-open."""

    eyes: tuple[int, int, int, int]
    mouth: tuple[int, int, int, int]

    def __post_init__(self):
        for name, box in (("eyes", self.eyes), ("mouth", self.mouth)):
            x0, y0, x1, y1 = box
            if not (x0 < x1 and y0 < y1):
                raise ValueError(f"{name} box {box} is empty or inverted")


def _centered_box(cx: int, cy: int, w: int, h: int, lw: int, lh: int) -> tuple[int, int, int, int]:
    """Fixed-size box centered at (cx, cy), shifted to stay inside lw x lh."""
    x0 = cx - w // 2
    y0 = cy - h // 2
    x0 = min(max(x0, 0), lw - w)
    y0 = min(max(y0, 0), lh - h)
    return (x0, y0, x0 + w, y0 + h)


def landmarks_to_latent_boxes(
    lm: LandmarkSet,
    image_size: tuple[int, int],
    region_size: tuple[tuple[int, int], tuple[int, int]] = ((4, 2), (2, 2)),
) -> RegionBoxes:
    """Map pixel landmarks to fixed-size latent rectangles.

    ``region_size`` holds (width, height) in latent cells for the eyes and
    mouth boxes. Centers are divided by the codec factor and rounded to the
    nearest cell; boxes near the border are clamped without shrinking.
    """
    h, w = image_size
    lm.validate(image_size)
    f = SPATIAL_FACTOR
    lh, lw = h // f, w // f
    (ew, eh), (mw, mh) = region_size
    if ew > lw or eh > lh or mw > lw or mh > lh:
        raise ValueError(
            f"region sizes {region_size} exceed latent dimensions {lw}x{lh}"
        )
    eye_cx = (lm.left_eye[0] + lm.right_eye[0]) / 2.0
    eye_cy = (lm.left_eye[1] + lm.right_eye[1]) / 2.0
    eyes = _centered_box(round(eye_cx / f), round(eye_cy / f), ew, eh, lw, lh)
    mouth = _centered_box(round(lm.mouth[0] / f), round(lm.mouth[1] / f), mw, mh, lw, lh)
    return RegionBoxes(eyes=eyes, mouth=mouth)


def crop_regions(z: torch.Tensor, boxes: RegionBoxes) -> tuple[torch.Tensor, torch.Tensor]:
    """Crop the eye and mouth rectangles out of a (C, H, W) latent."""
    _, lh, lw = z.shape[-3], z.shape[-2], z.shape[-1]
    out = []
    for box in (boxes.eyes, boxes.mouth):
        x0, y0, x1, y1 = box
        if x0 < 0 or y0 < 0 or x1 > lw or y1 > lh:
            raise ValueError(f"box {box} outside latent extent {lw}x{lh}")
        out.append(z[..., y0:y1, x0:x1])
    return out[0], out[1]
