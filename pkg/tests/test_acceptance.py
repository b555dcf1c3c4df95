"""End-to-end acceptance checks for the restoration pipeline.

Each test pins one externally visible guarantee at its stated tolerance:
exact noising/denoising inversion, the shape of the timestep weight, the
landmark-to-latent region mapping, facial-loss gradients, the adapter's
exact no-op at initialization, the stage-2 freeze contract, a desk-scale
training run whose restorations must beat their degraded inputs, metric
agreement with naive double-precision oracles, the weight-parameter
ablation grid, and byte-level determinism of the command-line pipeline.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
import torch
from scipy import integrate, linalg, optimize, stats

from facediff import codec
from facediff.cli import cli
from facediff.config import load_config
from facediff.dataset import FaceRecord, annotate, load_png, read_manifest, save_png, write_manifest
from facediff.facegen import face_area_fraction, gen_face_with_params, quality_score
from facediff.losses import RegionDiscriminators, facial_loss
from facediff.metrics import FeatureExtractor, feature_fid, psnr, ssim
from facediff.models import DenoiserConfig, Denoiser, init_adapter_from_denoiser
from facediff.regions import (
    LandmarkSet,
    RegionBoxes,
    TimeWeightParams,
    landmarks_to_latent_boxes,
    time_weight,
)
from facediff.restore import restore
from facediff.schedule import add_noise, make_schedule, predict_z0
from facediff.train import (
    build_denoiser,
    build_schedule,
    train_stage1,
    train_stage2,
)

REPO = Path(__file__).resolve().parents[1]


# ---------------------------------------------------------------------------
# 1. Noising followed by clean-latent prediction is an exact inverse.
# ---------------------------------------------------------------------------


def test_noise_round_trip_accuracy_and_speed(rng):
    start = time.monotonic()
    worst32 = worst64 = 0.0
    for _ in range(100):
        T = int(rng.integers(2, 1000))
        s = make_schedule(T, 1e-4, float(rng.uniform(0.01, 0.05)))
        t = int(rng.integers(0, T))
        z0 = rng.standard_normal((8, 4, 4))
        eps = rng.standard_normal((8, 4, 4))

        z32, e32 = torch.from_numpy(z0.astype(np.float32)), torch.from_numpy(eps.astype(np.float32))
        back32 = predict_z0(add_noise(z32, e32, t, s), e32, t, s)
        worst32 = max(worst32, float((back32 - z32.double()).abs().max()))

        z64, e64 = torch.from_numpy(z0), torch.from_numpy(eps)
        back64 = predict_z0(add_noise(z64, e64, t, s), e64, t, s)
        worst64 = max(worst64, float((back64 - z64).abs().max()))
    elapsed = time.monotonic() - start
    assert worst32 < 1e-5
    assert worst64 < 1e-10
    assert elapsed < 5.0


# ---------------------------------------------------------------------------
# 2. The timestep weight: closed form, symmetry, normalization, peak location.
# ---------------------------------------------------------------------------


def test_time_weight_midpoint_closed_form():
    p = TimeWeightParams(m=0.0, s=1.0)
    assert abs(time_weight(0.5, p) - 4.0 / math.sqrt(2.0 * math.pi)) < 1e-9


def test_time_weight_symmetric_for_centered_location():
    p = TimeWeightParams(m=0.0, s=1.0)
    for t in np.linspace(1.0 / 1024.0, 1.0 - 1.0 / 1024.0, 1000):
        a, b = time_weight(float(t), p), time_weight(float(1.0 - t), p)
        assert abs(a - b) <= 1e-9 * max(a, b)


@pytest.mark.parametrize("m,s", [(0.0, 1.0), (-0.5, 1.0)])
def test_time_weight_integrates_to_one(m, s):
    p = TimeWeightParams(m=m, s=s)
    total, _ = integrate.quad(lambda t: time_weight(t, p), 0.0, 1.0, limit=200)
    assert abs(total - 1.0) < 1e-3


def test_time_weight_peak_solves_stationarity_condition():
    m, s = -0.5, 1.0
    p = TimeWeightParams(m=m, s=s)
    res = optimize.minimize_scalar(
        lambda t: -time_weight(t, p), bounds=(0.01, 0.99), method="bounded",
        options={"xatol": 1e-9},
    )
    # stationary point of the density: logit(t) = m + s^2 (2t - 1)
    root = optimize.brentq(
        lambda t: math.log(t / (1.0 - t)) - (m + s * s * (2.0 * t - 1.0)), 0.05, 0.49
    )
    assert abs(res.x - root) < 1e-3
    assert 0.25 < res.x < 0.31


# ---------------------------------------------------------------------------
# 3. Landmark-to-latent region mapping vs a brute-force mask downsample.
# ---------------------------------------------------------------------------


def _oracle_box(px, py, box_w, box_h, size=512):
    """Mark the center pixel in a full-resolution mask, block-downsample by
    the codec factor, and build a clamped fixed-size box around the hit."""
    f = codec.SPATIAL_FACTOR
    lat = size // f
    mask = np.zeros((size, size))
    mask[min(int(round(py)), size - 1), min(int(round(px)), size - 1)] = 1.0
    blocks = mask.reshape(lat, f, lat, f).sum(axis=(1, 3))
    cy, cx = np.unravel_index(int(np.argmax(blocks)), blocks.shape)
    x0 = min(max(cx - box_w // 2, 0), lat - box_w)
    y0 = min(max(cy - box_h // 2, 0), lat - box_h)
    return (x0, y0, x0 + box_w, y0 + box_h)


def test_region_mapping_matches_mask_downsample_oracle(rng):
    size = 512
    region_size = ((16, 8), (10, 6))
    start = time.monotonic()
    for _ in range(500):
        ley = float(rng.uniform(40, 250))
        rey = float(rng.uniform(40, 250))
        lm = LandmarkSet(
            left_eye=(float(rng.uniform(40, 250)), ley),
            right_eye=(float(rng.uniform(260, 470)), rey),
            mouth=(float(rng.uniform(60, 450)), float(rng.uniform(max(ley, rey) + 10, 500))),
        )
        boxes = landmarks_to_latent_boxes(lm, (size, size), region_size)
        eye_cx = (lm.left_eye[0] + lm.right_eye[0]) / 2.0
        eye_cy = (lm.left_eye[1] + lm.right_eye[1]) / 2.0
        oracle_eyes = _oracle_box(eye_cx, eye_cy, *region_size[0], size)
        oracle_mouth = _oracle_box(*lm.mouth, *region_size[1], size)
        for got, want in ((boxes.eyes, oracle_eyes), (boxes.mouth, oracle_mouth)):
            for g, w in zip(got, want):
                assert abs(g - w) <= 1
    assert time.monotonic() - start < 10.0


# ---------------------------------------------------------------------------
# 4. Facial-loss gradients match central finite differences.
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("t_norm", [0.1, 0.5, 0.9])
def test_facial_loss_gradient_matches_finite_differences(t_norm, rng):
    torch.manual_seed(7)
    discs = RegionDiscriminators(in_channels=4, width=8).double()
    boxes = RegionBoxes(eyes=(1, 1, 5, 3), mouth=(4, 5, 6, 7))
    p = TimeWeightParams(m=-0.5, s=1.0)
    z0 = torch.from_numpy(rng.standard_normal((4, 8, 8)))
    base = torch.from_numpy(rng.standard_normal((4, 8, 8)))

    def value(x):
        return facial_loss(x, z0, boxes, t_norm, discs, p, lambda_d=0.1, lambda_s=1.0)

    x = base.clone().requires_grad_(True)
    value(x).backward()
    analytic = x.grad.clone()

    h = 1e-5
    numeric = torch.zeros_like(base)
    flat, gflat = base.view(-1), numeric.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = float(flat[i])
            flat[i] = orig + h
            up = float(value(base))
            flat[i] = orig - h
            down = float(value(base))
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)

    rel = float((analytic - numeric).norm() / numeric.norm())
    assert rel < 1e-3
    # gradient must actually reach both facial regions
    for x0, y0, x1, y1 in (boxes.eyes, boxes.mouth):
        assert float(analytic[:, y0:y1, x0:x1].abs().sum()) > 0.0


# ---------------------------------------------------------------------------
# 5. A freshly initialized adapter changes nothing.
# ---------------------------------------------------------------------------


def test_fresh_adapter_is_exact_no_op(rng):
    torch.manual_seed(3)
    den = Denoiser(DenoiserConfig(base_channels=16, time_dim=32))
    adapter = init_adapter_from_denoiser(den)
    with torch.no_grad():
        for _ in range(20):
            z = torch.from_numpy(rng.standard_normal((1, 192, 8, 8)).astype(np.float32))
            deg = torch.from_numpy(rng.uniform(0, 1, (1, 3, 64, 64)).astype(np.float32))
            t = torch.tensor([int(rng.integers(0, 1000))])
            ctrl = adapter(deg, z, t, tags=[])
            diff = (den(z, t, tags=[], ctrl=ctrl) - den(z, t, tags=[])).abs().max()
            assert float(diff) < 1e-6


# ---------------------------------------------------------------------------
# 6. Stage-2 freeze contract over a 100-iteration run.
# ---------------------------------------------------------------------------


def _small_corpus(tmp_path, max_iters, lambda_d, lambda_s):
    cfg_file = tmp_path / "cfg.yaml"
    cfg_file.write_text(
        "seed: 3\n"
        "schedule: {T: 8, beta_start: 0.01, beta_end: 0.1}\n"
        "model: {base_channels: 16, time_dim: 32}\n"
        "data: {num_faces: 4, val_faces: 2}\n"
        f"loss: {{lambda_d: {lambda_d}, lambda_s: {lambda_s}}}\n"
        f"train: {{learning_rate: 0.001, batch_size: 2, max_iters: {max_iters}, "
        "checkpoint_every: 1000}\n"
    )
    cfg = load_config(cfg_file)
    records = []
    for i in range(4):
        img, lm, params = gen_face_with_params(100 + i, 64)
        rel = f"hq/{i}.png"
        save_png(img, tmp_path / rel)
        records.append(
            FaceRecord(
                image_path=rel,
                landmarks=lm,
                face_area_fraction=face_area_fraction(params),
                quality_score=quality_score(params),
                annotation=annotate(params),
                degradation_seed=500 + i,
            )
        )
    write_manifest(records, tmp_path / "manifest.jsonl")
    return cfg, records


@pytest.mark.parametrize("lambdas", [(0.001, 0.001), (0.0, 0.0)])
def test_stage2_keeps_denoiser_frozen_over_100_iterations(tmp_path, lambdas):
    lam_d, lam_s = lambdas
    cfg, records = _small_corpus(tmp_path, max_iters=100, lambda_d=lam_d, lambda_s=lam_s)
    den = build_denoiser(cfg)
    den.freeze()
    before = {k: v.clone() for k, v in den.state_dict().items()}
    torch.manual_seed(cfg.seed)
    adapter = init_adapter_from_denoiser(den)
    log = train_stage2(den, adapter, RegionDiscriminators(), records, cfg, root=tmp_path)
    assert len(log.records) == 100
    for k, v in den.state_dict().items():
        assert torch.equal(v, before[k]), k
    if lam_d == 0.0 and lam_s == 0.0:
        assert all(r["facial_loss"] == 0.0 for r in log.records)
        assert all(r["disc_loss"] == 0.0 for r in log.records)
    else:
        assert any(r["facial_loss"] != 0.0 for r in log.records)


# ---------------------------------------------------------------------------
# 7. Desk-scale end-to-end run: restoration must beat its degraded inputs,
#    and the stage-2 loss must trend downward.
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def desk_scale_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    c = str(REPO / "configs" / "toy.yaml")
    data, val = root / "data", root / "val"
    start = time.monotonic()
    assert cli(["gen-data", "--config", c, "--out", str(data)]) == 0
    assert cli(["degrade", "--config", c, "--manifest", str(data / "train_manifest.jsonl"),
                "--data-root", str(data), "--out", str(data)]) == 0
    assert cli(["degrade", "--config", c, "--manifest", str(data / "val_manifest.jsonl"),
                "--data-root", str(data), "--out", str(val)]) == 0
    assert cli(["curate", "--config", c, "--manifest", str(data / "pairs_manifest.jsonl"),
                "--out", str(root / "curated")]) == 0

    cfg = load_config(c)
    records = read_manifest(root / "curated" / "curated_manifest.jsonl")
    den = build_denoiser(cfg)
    stage1_ts = None
    # decaying learning-rate ladder for the prior fit
    for iters, lr in ((4000, 5e-4), (3000, 2e-4), (2000, 1e-4)):
        cfg.train.max_iters = iters
        cfg.train.learning_rate = lr
        log = train_stage1(den, records, cfg, root=data)
        if stage1_ts is None:
            # every ladder phase restarts the seeded sampling stream, so
            # only one phase gives independent timestep draws
            stage1_ts = log.column("t")

    den.freeze()
    torch.manual_seed(cfg.seed)
    adapter = init_adapter_from_denoiser(den)
    cfg.train.max_iters = 500
    cfg.train.batch_size = 48
    cfg.train.learning_rate = 3e-4
    log2 = train_stage2(den, adapter, RegionDiscriminators(), records, cfg, root=data)

    schedule = build_schedule(cfg)
    vrecs = read_manifest(val / "pairs_manifest.jsonl")
    degraded_psnr, restored_psnr = [], []
    for i, r in enumerate(vrecs):
        hq = load_png(data / r.image_path)
        deg = load_png(val / r.degraded_path)
        out = restore(deg, den, adapter, schedule, cfg.sample.num_steps, seed=cfg.seed + i)
        degraded_psnr.append(psnr(deg, hq))
        restored_psnr.append(psnr(out, hq))
    return {
        "T": cfg.schedule.T,
        "stage1_ts": stage1_ts,
        "stage2_noise": log2.column("noise_loss"),
        "degraded_psnr": degraded_psnr,
        "restored_psnr": restored_psnr,
        "elapsed": time.monotonic() - start,
    }


def test_restoration_beats_degraded_inputs(desk_scale_run):
    assert len(desk_scale_run["degraded_psnr"]) == 16
    assert np.mean(desk_scale_run["restored_psnr"]) > np.mean(desk_scale_run["degraded_psnr"])


def test_stage2_noise_loss_trends_down(desk_scale_run):
    nl = desk_scale_run["stage2_noise"]
    assert len(nl) == 500
    assert np.mean(nl[-100:]) < np.mean(nl[:100])


def test_desk_scale_run_fits_compute_budget(desk_scale_run):
    assert desk_scale_run["elapsed"] < 2 * 3600


def test_training_timesteps_are_uniform(desk_scale_run):
    ts = np.asarray(desk_scale_run["stage1_ts"], dtype=int)
    assert len(ts) == 4000
    counts = np.bincount(ts, minlength=desk_scale_run["T"])
    assert stats.chisquare(counts).pvalue > 1e-3


# ---------------------------------------------------------------------------
# 8. Metrics agree with naive double-precision oracles.
# ---------------------------------------------------------------------------


def _naive_ssim(x, y):
    """Direct per-window SSIM on luminance, no convolution tricks."""
    luma = np.array([0.299, 0.587, 0.114])
    x = np.asarray(x, dtype=np.float64) @ luma
    y = np.asarray(y, dtype=np.float64) @ luma
    win, sigma = 11, 1.5
    ax = np.arange(win, dtype=np.float64) - (win - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    k /= k.sum()
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for i in range(x.shape[0] - win + 1):
        for j in range(x.shape[1] - win + 1):
            px = x[i : i + win, j : j + win]
            py = y[i : i + win, j : j + win]
            mx, my = (k * px).sum(), (k * py).sum()
            vx = (k * px * px).sum() - mx * mx
            vy = (k * py * py).sum() - my * my
            cov = (k * px * py).sum() - mx * my
            vals.append(
                ((2 * mx * my + c1) * (2 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2))
            )
    return float(np.mean(vals))


def test_metrics_match_naive_oracles(rng):
    corpus_a = [rng.uniform(0, 1, (16, 16, 3)) for _ in range(8)]
    corpus_b = [rng.uniform(0, 1, (16, 16, 3)) for _ in range(8)]

    for a, b in zip(corpus_a, corpus_b):
        mse = np.mean((a - b) ** 2)
        assert abs(psnr(a, b) - 10.0 * math.log10(1.0 / mse)) < 1e-6
        assert abs(ssim(a, b) - _naive_ssim(a, b)) < 1e-6

    fx = FeatureExtractor(dim=4, seed=9)
    ea = np.stack([fx.embed(im) for im in corpus_a])
    eb = np.stack([fx.embed(im) for im in corpus_b])
    mu_a, mu_b = ea.mean(axis=0), eb.mean(axis=0)
    ca, cb = np.cov(ea, rowvar=False), np.cov(eb, rowvar=False)
    covmean = linalg.sqrtm(ca @ cb)
    oracle = float(
        np.sum((mu_a - mu_b) ** 2)
        + np.trace(ca) + np.trace(cb) - 2.0 * np.trace(covmean.real)
    )
    assert abs(feature_fid(corpus_a, corpus_b, fx) - oracle) < 1e-6


def test_metric_fixed_points(rng):
    corpus = [rng.uniform(0, 1, (16, 16, 3)) for _ in range(8)]
    fx = FeatureExtractor(dim=4, seed=9)
    assert abs(feature_fid(corpus, corpus, fx)) < 1e-6
    assert ssim(corpus[0], corpus[0]) == 1.0
    assert psnr(corpus[0], corpus[0]) == float("inf")


# ---------------------------------------------------------------------------
# 9./10. Command-line pipeline: ablation grid and byte-level determinism.
# ---------------------------------------------------------------------------

TINY_CFG = """\
seed: 11
schedule: {T: 8, beta_start: 0.01, beta_end: 0.1}
model: {base_channels: 16, time_dim: 32}
data: {num_faces: 4, val_faces: 3}
degrade: {blur_sigma: [1.0, 2.0], downscale: [2.0, 4.0], noise_sigma: [5, 15], jpeg_quality: [60, 90]}
train: {learning_rate: 0.001, batch_size: 2, max_iters: 2, checkpoint_every: 10}
loss: {lambda_d: 0.0, lambda_s: 0.0}
sample: {num_steps: 4}
eval: {fid_dim: 2}
"""


def _run_pipeline(root: Path) -> None:
    cfg = root / "cfg.yaml"
    cfg.write_text(TINY_CFG)
    c = str(cfg)
    data = root / "data"
    for argv in (
        ["gen-data", "--config", c, "--out", str(data)],
        ["degrade", "--config", c, "--manifest", str(data / "train_manifest.jsonl"),
         "--data-root", str(data), "--out", str(data)],
        ["degrade", "--config", c, "--manifest", str(data / "val_manifest.jsonl"),
         "--data-root", str(data), "--out", str(root / "val")],
        ["curate", "--config", c, "--manifest", str(data / "pairs_manifest.jsonl"),
         "--out", str(root / "curated")],
        ["train-stage1", "--config", c, "--manifest", str(data / "pairs_manifest.jsonl"),
         "--data-root", str(data), "--out", str(root / "s1")],
        ["train-stage2", "--config", c, "--manifest", str(data / "pairs_manifest.jsonl"),
         "--data-root", str(data), "--stage1", str(root / "s1" / "stage1_final.npz"),
         "--out", str(root / "s2")],
        ["restore", "--config", c, "--checkpoint", str(root / "s2" / "stage2_final.npz"),
         "--images", str(root / "val" / "degraded"), "--out", str(root / "out")],
        ["eval", "--config", c, "--restored", str(root / "out" / "restored"),
         "--reference", str(data / "hq"), "--out", str(root / "eval")],
        ["report", "--config", c, "--inputs", str(root / "eval" / "report.json"),
         "--out", str(root / "summary")],
    ):
        assert cli(argv) == 0, argv[0]


def test_time_weight_ablation_grid_end_to_end(tmp_path):
    base = tmp_path / "base"
    base.mkdir()
    _run_pipeline(base)
    data = base / "data"
    reports = []
    for m, s in itertools.product((-0.5, 0.0, 0.5), (0.5, 1.0)):
        name = f"m{m}_s{s}"
        cell = tmp_path / "cells" / name
        cell.mkdir(parents=True)
        cfg = cell / "cfg.yaml"
        cfg.write_text(
            TINY_CFG.replace(
                "loss: {lambda_d: 0.0, lambda_s: 0.0}",
                f"loss: {{m: {m}, s: {s}, lambda_d: 0.001, lambda_s: 0.001}}",
            )
        )
        c = str(cfg)
        assert cli(["train-stage2", "--config", c,
                    "--manifest", str(data / "pairs_manifest.jsonl"),
                    "--data-root", str(data),
                    "--stage1", str(base / "s1" / "stage1_final.npz"),
                    "--out", str(cell / "s2")]) == 0
        assert cli(["restore", "--config", c,
                    "--checkpoint", str(cell / "s2" / "stage2_final.npz"),
                    "--images", str(base / "val" / "degraded"),
                    "--out", str(cell / "run")]) == 0
        assert cli(["eval", "--config", c, "--restored", str(cell / "run" / "restored"),
                    "--reference", str(data / "hq"), "--out", str(cell)]) == 0
        reports.append(str(cell / "report.json"))
    assert cli(["report", "--inputs", *reports, "--out", str(tmp_path / "summary")]) == 0

    rows = (tmp_path / "summary" / "summary.csv").read_text().splitlines()
    assert len(rows) == 7
    hashes = set()
    for path in reports:
        d = json.loads(Path(path).read_text())
        hashes.add(d["config_hash"])
        assert math.isfinite(d["mean_psnr"]) and d["mean_psnr"] > 0
        assert 0 < d["mean_ssim"] <= 1
        assert d["fid"] >= 0
    assert len(hashes) == 6


def test_full_pipeline_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    _run_pipeline(a)
    _run_pipeline(b)
    files = sorted(p for p in a.rglob("*") if p.is_file())
    assert any(p.suffix == ".npz" for p in files)
    assert any(p.name == "report.json" for p in files)
    for p in files:
        q = b / p.relative_to(a)
        assert q.is_file(), q
        assert q.read_bytes() == p.read_bytes(), p.relative_to(a)
