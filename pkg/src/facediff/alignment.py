"""Similarity-transform face alignment onto a fixed landmark template."""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .regions import LandmarkSet


@dataclass(frozen=True)
class AlignmentTemplate:
    """Canonical eye/mouth positions in output coordinates."""

    output_size: int
    left_eye: tuple[float, float]
    right_eye: tuple[float, float]
    mouth: tuple[float, float]

    @classmethod
    def default(cls, output_size: int) -> "AlignmentTemplate":
        s = float(output_size)
        return cls(
            output_size=output_size,
            left_eye=(0.35 * s, 0.40 * s),
            right_eye=(0.65 * s, 0.40 * s),
            mouth=(0.50 * s, 0.72 * s),
        )

    def points(self) -> np.ndarray:
        return np.array([self.left_eye, self.right_eye, self.mouth], dtype=np.float64)


def _similarity_from_points(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Least-squares rotation+scale+translation mapping src onto dst (2x3)."""
    src_mean = src.mean(axis=0)
    dst_mean = dst.mean(axis=0)
    src_c = src - src_mean
    dst_c = dst - dst_mean
    var = (src_c**2).sum() / len(src)
    if var < 1e-9:
        raise RuntimeError("degenerate landmark configuration: zero spread")
    cov = dst_c.T @ src_c / len(src)
    u, s, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    diag = np.diag([1.0, d])
    rot = u @ diag @ vt
    scale = np.trace(np.diag(s) @ diag) / var
    if abs(scale) < 1e-9:
        raise RuntimeError("degenerate landmark configuration: collapsed scale")
    t = dst_mean - scale * rot @ src_mean
    m = np.zeros((2, 3), dtype=np.float64)
    m[:, :2] = scale * rot
    m[:, 2] = t
    return m


class AlignmentError(RuntimeError):
    pass


def align(
    image: np.ndarray,
    lm: LandmarkSet,
    tpl: AlignmentTemplate,
) -> tuple[np.ndarray, LandmarkSet]:
    """Warp the face so its landmarks land on the template positions."""
    src = np.array([lm.left_eye, lm.right_eye, lm.mouth], dtype=np.float64)
    # collinearity check: triangle area relative to its extent
    v1, v2 = src[1] - src[0], src[2] - src[0]
    area = 0.5 * abs(v1[0] * v2[1] - v1[1] * v2[0])
    span = max(np.ptp(src[:, 0]), np.ptp(src[:, 1]), 1.0)
    if area / (span * span) < 1e-4:
        raise AlignmentError("landmarks are (near-)collinear; cannot align")
    try:
        m = _similarity_from_points(src, tpl.points())
    except RuntimeError as e:
        raise AlignmentError(str(e)) from e
    out = cv2.warpAffine(
        image.astype(np.float32),
        m,
        (tpl.output_size, tpl.output_size),
        flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_REPLICATE,
    )
    warped = (m[:, :2] @ src.T).T + m[:, 2]
    new_lm = LandmarkSet(
        left_eye=tuple(warped[0]),
        right_eye=tuple(warped[1]),
        mouth=tuple(warped[2]),
    )
    return out, new_lm
