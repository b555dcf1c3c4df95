"""Dataset records, manifests, quality-first curation, and tag annotation.

Manifests are JSON lines, one FaceRecord per line. HQ target images are
stored as lossless PNG only.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .facegen import FaceParams
from .regions import LandmarkSet
from .vocab import validate_tags

log = logging.getLogger(__name__)


@dataclass
class AnnotationRecord:
    semantic_tags: list[str] = field(default_factory=list)
    photographic_tags: list[str] = field(default_factory=list)

    def all_tags(self) -> list[str]:
        return list(self.semantic_tags) + list(self.photographic_tags)

    def to_dict(self) -> dict:
        return {"semantic_tags": self.semantic_tags, "photographic_tags": self.photographic_tags}

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotationRecord":
        return cls(
            semantic_tags=list(d.get("semantic_tags", [])),
            photographic_tags=list(d.get("photographic_tags", [])),
        )


@dataclass
class FaceRecord:
    image_path: str
    landmarks: LandmarkSet
    face_area_fraction: float
    quality_score: float
    annotation: AnnotationRecord = field(default_factory=AnnotationRecord)
    degraded_path: str | None = None
    degradation_seed: int | None = None

    def to_dict(self) -> dict:
        d = {
            "image_path": self.image_path,
            "landmarks": self.landmarks.to_dict(),
            "face_area_fraction": self.face_area_fraction,
            "quality_score": self.quality_score,
            "annotation": self.annotation.to_dict(),
        }
        if self.degraded_path is not None:
            d["degraded_path"] = self.degraded_path
        if self.degradation_seed is not None:
            d["degradation_seed"] = self.degradation_seed
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FaceRecord":
        return cls(
            image_path=d["image_path"],
            landmarks=LandmarkSet.from_dict(d["landmarks"]),
            face_area_fraction=float(d["face_area_fraction"]),
            quality_score=float(d["quality_score"]),
            annotation=AnnotationRecord.from_dict(d.get("annotation", {})),
            degraded_path=d.get("degraded_path"),
            degradation_seed=d.get("degradation_seed"),
        )


def write_manifest(records: list[FaceRecord], path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> list[FaceRecord]:
    records = []
    with open(path) as f:
        for i, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(FaceRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                log.warning("skipping malformed manifest line %d: %s", i + 1, e)
    return records


def save_png(image: np.ndarray, path: str | Path):
    """Write a [0,1] RGB array as lossless PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    u8 = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    if not cv2.imwrite(str(path), cv2.cvtColor(u8, cv2.COLOR_RGB2BGR)):
        raise RuntimeError(f"failed to write {path}")


def load_png(path: str | Path) -> np.ndarray:
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise FileNotFoundError(f"cannot read image {path}")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0


@dataclass(frozen=True)
class CurationThresholds:
    min_face_area: float = 0.1
    min_quality: float = 0.5


def curate(
    records: list[FaceRecord],
    thresholds: CurationThresholds,
) -> tuple[list[FaceRecord], list[tuple[str, str]]]:
    """Filter records by face size and quality, preserving input order.

    Returns (kept, rejections) where rejections is a list of
    (image_path, reason) pairs. Malformed entries are logged and skipped
    rather than aborting the batch.
    """
    kept: list[FaceRecord] = []
    rejections: list[tuple[str, str]] = []
    for r in records:
        try:
            if r.face_area_fraction < thresholds.min_face_area:
                rejections.append((r.image_path, "small-face"))
            elif r.quality_score < thresholds.min_quality:
                rejections.append((r.image_path, "low-quality"))
            else:
                kept.append(r)
        except (AttributeError, TypeError) as e:
            log.warning("skipping malformed record: %s", e)
            rejections.append((getattr(r, "image_path", "<unknown>"), "malformed"))
    return kept, rejections


def annotate(params: FaceParams) -> AnnotationRecord:
    """Rule-based two-tier tags from known generator parameters."""
    semantic = [params.age_band]
    semantic.append("glasses" if params.glasses else "no accessories")
    semantic.append("smiling" if params.mouth_curve > 0.3 else "neutral expression")

    photographic = []
    photographic.append("soft lighting" if params.lighting_grad < 0.12 else "hard lighting")
    photographic.append("sharp focus" if params.texture_amp < 0.03 else "soft focus")
    photographic.append("smooth skin" if params.texture_amp < 0.02 else "textured skin")
    photographic.append("natural makeup" if params.makeup else "no makeup")

    return AnnotationRecord(
        semantic_tags=validate_tags(semantic),
        photographic_tags=validate_tags(photographic),
    )
