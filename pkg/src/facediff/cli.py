"""Command-line surface binding the pipeline into reproducible runs.

Subcommands: gen-data, degrade, curate, train-stage1, train-stage2,
restore, eval, report. Every subcommand takes --config, --seed, --out;
reruns with identical (config, seed) produce byte-identical outputs.
Exit codes: 0 success, 2 invalid arguments, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .alignment import AlignmentTemplate, align
from .config import RunConfig, config_hash, load_config
from .dataset import (
    CurationThresholds,
    FaceRecord,
    annotate,
    curate,
    load_png,
    read_manifest,
    save_png,
    write_manifest,
)
from .degrade import DegradationRanges, degrade as apply_degradation, sample_degradation
from .facegen import face_area_fraction, gen_face_with_params, quality_score
from .metrics import FeatureExtractor, MetricReport, feature_fid, psnr, ssim
from .models import init_adapter_from_denoiser
from .losses import RegionDiscriminators
from .restore import restore as run_restore
from .train import (
    build_denoiser,
    build_schedule,
    denoiser_from_checkpoint,
    stage2_models_from_checkpoint,
    train_stage1,
    train_stage2,
)

log = logging.getLogger(__name__)


def _face_seed(base_seed: int, index: int) -> int:
    return base_seed * 1_000_003 + index


def cmd_gen_data(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    size = cfg.data.image_size
    tpl = AlignmentTemplate.default(size)
    splits = (("train", cfg.data.num_faces, 0), ("val", cfg.data.val_faces, cfg.data.num_faces))
    for split, count, offset in splits:
        records = []
        for i in range(count):
            seed = _face_seed(cfg.seed, offset + i)
            img, lm, params = gen_face_with_params(seed, size)
            if cfg.data.align:
                img, lm = align(img, lm, tpl)
            rel = f"hq/{split}_{i:04d}.png"
            save_png(img, out / rel)
            records.append(
                FaceRecord(
                    image_path=rel,
                    landmarks=lm,
                    face_area_fraction=face_area_fraction(params),
                    quality_score=quality_score(params),
                    annotation=annotate(params),
                )
            )
        write_manifest(records, out / f"{split}_manifest.jsonl")
    print(f"wrote {cfg.data.num_faces} train + {cfg.data.val_faces} val faces to {out}")
    return 0


def _degrade_ranges(cfg: RunConfig) -> DegradationRanges:
    d = cfg.degrade
    return DegradationRanges(
        blur_sigma=tuple(d.blur_sigma),
        downscale=tuple(d.downscale),
        noise_sigma=tuple(d.noise_sigma),
        jpeg_quality=tuple(d.jpeg_quality),
    )


def cmd_degrade(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    root = Path(args.data_root)
    records = read_manifest(args.manifest)
    ranges = _degrade_ranges(cfg)
    updated = []
    for i, r in enumerate(records):
        seed = _face_seed(cfg.seed, i) + 7
        rng = np.random.default_rng(seed)
        params = sample_degradation(rng, ranges)
        img = load_png(root / r.image_path)
        deg = apply_degradation(img, params, seed=seed)
        rel = f"degraded/{Path(r.image_path).stem}.png"
        save_png(deg, out / rel)
        r.degraded_path = rel
        r.degradation_seed = seed
        updated.append(r)
    write_manifest(updated, out / "pairs_manifest.jsonl")
    print(f"degraded {len(updated)} images into {out}")
    return 0


def cmd_curate(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    records = read_manifest(args.manifest)
    thresholds = CurationThresholds(
        min_face_area=cfg.curate.min_face_area, min_quality=cfg.curate.min_quality
    )
    kept, rejections = curate(records, thresholds)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(kept, out / "curated_manifest.jsonl")
    with open(out / "rejections.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["image_path", "reason"])
        w.writerows(rejections)
    print(f"kept {len(kept)}/{len(records)} records")
    return 0


def cmd_train_stage1(args, cfg: RunConfig) -> int:
    records = read_manifest(args.manifest)
    denoiser = build_denoiser(cfg)
    train_stage1(
        denoiser, records, cfg, root=args.data_root, out_dir=args.out, resume=args.resume
    )
    print(f"stage 1 complete; checkpoints in {args.out}")
    return 0


def cmd_train_stage2(args, cfg: RunConfig) -> int:
    import torch

    records = read_manifest(args.manifest)
    stage1 = args.stage1 or cfg.train.stage1_checkpoint
    if stage1 is None:
        raise ValueError("stage 2 requires a stage-1 checkpoint (--stage1)")
    denoiser, _ = denoiser_from_checkpoint(stage1)
    denoiser.freeze()
    torch.manual_seed(cfg.seed)
    adapter = init_adapter_from_denoiser(denoiser)
    discriminators = RegionDiscriminators()
    train_stage2(
        denoiser, adapter, discriminators, records, cfg,
        root=args.data_root, out_dir=args.out, resume=args.resume,
    )
    print(f"stage 2 complete; checkpoints in {args.out}")
    return 0


def cmd_restore(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    denoiser, adapter, _, _ = stage2_models_from_checkpoint(args.checkpoint)
    schedule = build_schedule(cfg)
    paths = sorted(Path(args.images).glob("*.png"))
    if not paths:
        raise ValueError(f"no PNG images found in {args.images}")
    for i, p in enumerate(paths):
        img = load_png(p)
        res = run_restore(
            img, denoiser, adapter, schedule, cfg.sample.num_steps, seed=cfg.seed + i
        )
        save_png(res, out / "restored" / p.name)
    print(f"restored {len(paths)} images into {out / 'restored'}")
    return 0


def _report_rows(report: MetricReport):
    rows = [["name", "psnr_db", "ssim"]]
    for name, pv, sv in zip(report.names, report.psnr_values, report.ssim_values):
        rows.append([name, "inf" if pv == float("inf") else f"{pv:.6f}", f"{sv:.6f}"])
    return rows


def cmd_eval(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    restored_dir = Path(args.restored)
    reference_dir = Path(args.reference)
    names = sorted(p.name for p in restored_dir.glob("*.png"))
    if not names:
        raise ValueError(f"no PNG images found in {restored_dir}")
    restored, reference = [], []
    for n in names:
        ref = reference_dir / n
        if not ref.exists():
            raise ValueError(f"missing reference image {ref}")
        restored.append(load_png(restored_dir / n))
        reference.append(load_png(ref))
    psnr_vals = [psnr(a, b) for a, b in zip(restored, reference)]
    ssim_vals = [ssim(a, b) for a, b in zip(restored, reference)]
    fx = FeatureExtractor(dim=cfg.eval.fid_dim, seed=cfg.eval.fid_seed)
    fid = feature_fid(restored, reference, fx)
    report = MetricReport(
        names=names,
        psnr_values=psnr_vals,
        ssim_values=ssim_vals,
        fid=fid,
        config_hash=config_hash(cfg),
        seed=cfg.seed,
    )
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w") as f:
        json.dump(report.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")
    with open(out / "report.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerows(_report_rows(report))
        w.writerow([])
        w.writerow(["mean_psnr_db", "mean_ssim", "fid"])
        mp = report.mean_psnr
        w.writerow(["inf" if mp == float("inf") else f"{mp:.6f}", f"{report.mean_ssim:.6f}", f"{fid:.6f}"])
    print(f"mean PSNR {report.mean_psnr:.3f} dB, mean SSIM {report.mean_ssim:.4f}, FID {fid:.4f}")
    return 0


def cmd_report(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [["label", "mean_psnr_db", "mean_ssim", "fid", "config_hash", "seed"]]
    for path in args.inputs:
        with open(path) as f:
            d = json.load(f)
        label = Path(path).parent.name
        rows.append([
            label,
            d["mean_psnr"] if isinstance(d["mean_psnr"], str) else f"{d['mean_psnr']:.6f}",
            f"{d['mean_ssim']:.6f}",
            f"{d['fid']:.6f}",
            d["config_hash"],
            d["seed"],
        ])
    with open(out / "summary.csv", "w", newline="") as f:
        csv.writer(f).writerows(rows)
    print(f"summary over {len(args.inputs)} reports written to {out / 'summary.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="facediff", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **extra):
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", type=str, required=True, help="output directory")
        p.set_defaults(fn=fn)
        return p

    add("gen-data", cmd_gen_data)

    p = add("degrade", cmd_degrade)
    p.add_argument("--manifest", type=str, required=True)
    p.add_argument("--data-root", type=str, required=True)

    p = add("curate", cmd_curate)
    p.add_argument("--manifest", type=str, required=True)

    p = add("train-stage1", cmd_train_stage1)
    p.add_argument("--manifest", type=str, required=True)
    p.add_argument("--data-root", type=str, required=True)
    p.add_argument("--resume", type=str, default=None)

    p = add("train-stage2", cmd_train_stage2)
    p.add_argument("--manifest", type=str, required=True)
    p.add_argument("--data-root", type=str, required=True)
    p.add_argument("--stage1", type=str, default=None)
    p.add_argument("--resume", type=str, default=None)

    p = add("restore", cmd_restore)
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--images", type=str, required=True)

    p = add("eval", cmd_eval)
    p.add_argument("--restored", type=str, required=True)
    p.add_argument("--reference", type=str, required=True)

    p = add("report", cmd_report)
    p.add_argument("--inputs", type=str, nargs="+", required=True)

    return parser


def cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        cfg = load_config(args.config, seed_override=args.seed)
        return args.fn(args, cfg)
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        log.exception("runtime failure")
        print(f"runtime failure: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
