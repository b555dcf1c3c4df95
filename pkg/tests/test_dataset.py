import numpy as np
import pytest

from facediff.dataset import (
    AnnotationRecord,
    CurationThresholds,
    FaceRecord,
    annotate,
    curate,
    load_png,
    read_manifest,
    save_png,
    write_manifest,
)
from facediff.facegen import FaceParams, gen_face, params_to_dict
from facediff.regions import LandmarkSet
from facediff.vocab import SEMANTIC_TAGS, PHOTOGRAPHIC_TAGS


def _record(path="x.png", area=0.3, quality=0.8):
    return FaceRecord(
        image_path=path,
        landmarks=LandmarkSet((20, 25), (40, 25), (30, 45)),
        face_area_fraction=area,
        quality_score=quality,
        annotation=AnnotationRecord(["smiling"], ["soft lighting"]),
    )


def test_record_dict_round_trip():
    r = _record()
    r.degraded_path = "y.png"
    r.degradation_seed = 7
    assert FaceRecord.from_dict(r.to_dict()) == r


def test_manifest_round_trip(tmp_path):
    recs = [_record(f"img_{i}.png") for i in range(5)]
    p = tmp_path / "m.jsonl"
    write_manifest(recs, p)
    assert read_manifest(p) == recs


def test_manifest_skips_malformed_lines(tmp_path, caplog):
    p = tmp_path / "m.jsonl"
    write_manifest([_record("a.png"), _record("b.png")], p)
    lines = p.read_text().splitlines()
    lines.insert(1, "{not json")
    lines.insert(2, '{"image_path": "missing-fields.png"}')
    p.write_text("\n".join(lines) + "\n")
    recs = read_manifest(p)
    assert [r.image_path for r in recs] == ["a.png", "b.png"]


def test_manifest_is_deterministic(tmp_path):
    recs = [_record(f"img_{i}.png") for i in range(3)]
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_manifest(recs, p1)
    write_manifest(recs, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_png_round_trip(tmp_path):
    img = gen_face(3, 64)[0]
    p = tmp_path / "f.png"
    save_png(img, p)
    back = load_png(p)
    # PNG is lossless over the 8-bit quantization applied at save time
    assert np.abs(back - img).max() <= 0.5 / 255.0 + 1e-6


def test_load_png_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_png(tmp_path / "nope.png")


def test_curate_reasons_and_order():
    recs = [
        _record("ok1.png"),
        _record("small.png", area=0.01),
        _record("blurry.png", quality=0.1),
        _record("ok2.png"),
    ]
    kept, rejected = curate(recs, CurationThresholds(min_face_area=0.1, min_quality=0.5))
    assert [r.image_path for r in kept] == ["ok1.png", "ok2.png"]
    assert ("small.png", "small-face") in rejected
    assert ("blurry.png", "low-quality") in rejected


def test_curate_empty():
    kept, rejected = curate([], CurationThresholds())
    assert kept == [] and rejected == []


def _params(**over):
    base = params_to_dict(FaceParams.sample(np.random.default_rng(0)))
    base.update(over)
    return FaceParams(**base)


def test_annotate_rules():
    a = annotate(_params(mouth_curve=0.8, glasses=True, lighting_grad=0.05,
                         texture_amp=0.01, makeup=False, age_band="elderly"))
    assert "smiling" in a.semantic_tags
    assert "glasses" in a.semantic_tags
    assert "elderly" in a.semantic_tags
    assert "soft lighting" in a.photographic_tags
    assert "sharp focus" in a.photographic_tags
    assert "smooth skin" in a.photographic_tags
    assert "no makeup" in a.photographic_tags

    b = annotate(_params(mouth_curve=0.0, glasses=False, lighting_grad=0.2,
                         texture_amp=0.04, makeup=True, age_band="young adult"))
    assert "neutral expression" in b.semantic_tags
    assert "no accessories" in b.semantic_tags
    assert "hard lighting" in b.photographic_tags
    assert "soft focus" in b.photographic_tags
    assert "textured skin" in b.photographic_tags
    assert "natural makeup" in b.photographic_tags


def test_annotate_emits_only_vocabulary_tags():
    for seed in range(20):
        a = annotate(FaceParams.sample(np.random.default_rng(seed)))
        assert set(a.semantic_tags) <= set(SEMANTIC_TAGS)
        assert set(a.photographic_tags) <= set(PHOTOGRAPHIC_TAGS)
        assert a.all_tags() == a.semantic_tags + a.photographic_tags
