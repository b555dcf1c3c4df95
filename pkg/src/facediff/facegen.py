"""Procedural face generator with exact ground-truth landmarks.

Draws a stylized face (head ellipse, eyes with iris/sclera, eyebrows,
mouth with a lip line, skin texture, hair region) into an RGB array.
Because the geometry is synthesized, the eye and mouth landmarks are
exact, which downstream region-mapping tests rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .regions import LandmarkSet

MIN_SIZE = 64


@dataclass(frozen=True)
class FaceParams:
    """Seeded appearance and pose parameters for one rendered face."""

    skin_rgb: tuple[float, float, float]
    hair_rgb: tuple[float, float, float]
    iris_rgb: tuple[float, float, float]
    lip_rgb: tuple[float, float, float]
    head_rx: float          # head ellipse semi-axes, fraction of size
    head_ry: float
    pose_dx: float          # head center offset, fraction of size
    pose_dy: float
    eye_spacing: float      # half-distance between eye centers, fraction
    eye_height: float       # eye row, fraction above head center
    eye_radius: float
    mouth_drop: float       # mouth row, fraction below head center
    mouth_width: float
    mouth_curve: float      # positive = smiling
    texture_amp: float      # skin noise amplitude
    lighting_grad: float    # vertical lighting gradient strength
    glasses: bool
    makeup: bool
    age_band: str           # young adult | middle aged | elderly

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "FaceParams":
        skin_base = rng.uniform(0.45, 0.85)
        age = rng.choice(["young adult", "middle aged", "elderly"])
        return cls(
            skin_rgb=(skin_base, skin_base * rng.uniform(0.75, 0.9), skin_base * rng.uniform(0.6, 0.8)),
            hair_rgb=tuple(rng.uniform(0.05, 0.5, size=3)),
            iris_rgb=tuple(rng.uniform(0.1, 0.6, size=3)),
            lip_rgb=(rng.uniform(0.5, 0.85), rng.uniform(0.15, 0.35), rng.uniform(0.2, 0.4)),
            head_rx=rng.uniform(0.26, 0.33),
            head_ry=rng.uniform(0.34, 0.42),
            pose_dx=rng.uniform(-0.04, 0.04),
            pose_dy=rng.uniform(-0.04, 0.04),
            eye_spacing=rng.uniform(0.10, 0.14),
            eye_height=rng.uniform(0.08, 0.12),
            eye_radius=rng.uniform(0.030, 0.045),
            mouth_drop=rng.uniform(0.16, 0.22),
            mouth_width=rng.uniform(0.09, 0.13),
            mouth_curve=rng.uniform(-0.3, 1.0),
            texture_amp=rng.uniform(0.005, 0.05),
            lighting_grad=rng.uniform(0.0, 0.25),
            glasses=bool(rng.random() < 0.25),
            makeup=bool(rng.random() < 0.4),
            age_band=str(age),
        )


def render_face(params: FaceParams, size: int, seed: int = 0) -> tuple[np.ndarray, LandmarkSet]:
    """Rasterize a face at ``size`` x ``size`` and return exact landmarks."""
    if size < MIN_SIZE:
        raise ValueError(f"size must be >= {MIN_SIZE}, got {size}")
    if size % 8:
        raise ValueError(f"size must be divisible by 8, got {size}")
    rng = np.random.default_rng(seed)
    p = params
    s = float(size)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    cx = s * (0.5 + p.pose_dx)
    cy = s * (0.5 + p.pose_dy)
    rx, ry = s * p.head_rx, s * p.head_ry

    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = (0.12, 0.13, 0.16)  # backdrop

    head = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    for c in range(3):
        img[..., c] = np.where(head, p.skin_rgb[c], img[..., c])

    # hair: upper cap of a slightly larger ellipse
    hair = (((xx - cx) / (rx * 1.12)) ** 2 + ((yy - cy) / (ry * 1.12)) ** 2 <= 1.0) & (
        yy < cy - 0.55 * ry
    )
    for c in range(3):
        img[..., c] = np.where(hair, p.hair_rgb[c], img[..., c])

    eye_y = cy - p.eye_height * s
    lx, rx_eye = cx - p.eye_spacing * s, cx + p.eye_spacing * s
    er = p.eye_radius * s
    for ex in (lx, rx_eye):
        sclera = ((xx - ex) / (1.6 * er)) ** 2 + ((yy - eye_y) / er) ** 2 <= 1.0
        iris = (xx - ex) ** 2 + (yy - eye_y) ** 2 <= (0.55 * er) ** 2
        pupil = (xx - ex) ** 2 + (yy - eye_y) ** 2 <= (0.25 * er) ** 2
        for c in range(3):
            img[..., c] = np.where(sclera, 0.95, img[..., c])
            img[..., c] = np.where(iris, p.iris_rgb[c], img[..., c])
            img[..., c] = np.where(pupil, 0.05, img[..., c])
        brow = (np.abs(yy - (eye_y - 2.2 * er)) < 0.35 * er) & (np.abs(xx - ex) < 1.8 * er)
        for c in range(3):
            img[..., c] = np.where(brow, p.hair_rgb[c] * 0.6, img[..., c])
        if p.glasses:
            ring = np.abs(
                np.sqrt(((xx - ex) / (1.9 * er)) ** 2 + ((yy - eye_y) / (1.3 * er)) ** 2) - 1.0
            ) < 0.12
            for c in range(3):
                img[..., c] = np.where(ring, 0.08, img[..., c])

    mouth_y = cy + p.mouth_drop * s
    mw = p.mouth_width * s
    mh = 0.35 * mw
    curve = p.mouth_curve * mh * ((xx - cx) / mw) ** 2
    mouth = (((xx - cx) / mw) ** 2 + ((yy - (mouth_y - curve)) / mh) ** 2) <= 1.0
    lip = np.array(p.lip_rgb) * (1.15 if p.makeup else 0.9)
    for c in range(3):
        img[..., c] = np.where(mouth, np.clip(lip[c], 0, 1), img[..., c])
    lip_line = mouth & (np.abs(yy - (mouth_y - curve)) < 0.15 * mh)
    for c in range(3):
        img[..., c] = np.where(lip_line, lip[c] * 0.5, img[..., c])

    if p.age_band == "elderly":
        # sparse horizontal wrinkle lines on the forehead
        for k in range(3):
            wy = cy - ry * (0.45 + 0.12 * k)
            line = head & (np.abs(yy - wy) < 0.6) & (np.abs(xx - cx) < 0.6 * rx)
            for c in range(3):
                img[..., c] = np.where(line, img[..., c] * 0.8, img[..., c])

    # skin texture + lighting gradient
    noise = rng.standard_normal((size, size)) * p.texture_amp
    shade = 1.0 - p.lighting_grad * (yy / s - 0.5)
    for c in range(3):
        img[..., c] = np.where(head & ~mouth, img[..., c] + noise, img[..., c])
        img[..., c] *= shade

    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    lm = LandmarkSet(
        left_eye=(float(lx), float(eye_y)),
        right_eye=(float(rx_eye), float(eye_y)),
        mouth=(float(cx), float(mouth_y)),
    )
    return img, lm.validate((size, size))


def gen_face(seed: int, size: int) -> tuple[np.ndarray, LandmarkSet]:
    """Seeded face: parameters and rendering noise both derive from ``seed``."""
    rng = np.random.default_rng(seed)
    params = FaceParams.sample(rng)
    return render_face(params, size, seed=seed)


def gen_face_with_params(seed: int, size: int) -> tuple[np.ndarray, LandmarkSet, FaceParams]:
    rng = np.random.default_rng(seed)
    params = FaceParams.sample(rng)
    img, lm = render_face(params, size, seed=seed)
    return img, lm, params


def face_area_fraction(params: FaceParams) -> float:
    """Area of the head ellipse as a fraction of the image."""
    return float(np.pi * params.head_rx * params.head_ry)


def quality_score(params: FaceParams) -> float:
    """Deterministic quality proxy: crisp texture and mild lighting score high."""
    q = 1.0 - 8.0 * params.texture_amp - 0.8 * params.lighting_grad
    return float(np.clip(q, 0.0, 1.0))


def params_to_dict(params: FaceParams) -> dict:
    return asdict(params)
