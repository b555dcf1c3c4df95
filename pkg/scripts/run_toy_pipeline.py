#!/usr/bin/env python3
"""Run the full desk-scale pipeline from configs/toy.yaml.

Generates 64 training + 16 held-out faces, degrades them, trains the
denoiser prior (decaying learning-rate ladder) and then the control
adapter, restores the held-out degraded images, and prints per-image and
mean PSNR for degraded vs restored. Takes roughly 20 minutes on one CPU
core.

Usage: python3 scripts/run_toy_pipeline.py [workdir]
"""

import sys
import time
from pathlib import Path

import numpy as np
import torch

from facediff.cli import cli
from facediff.config import load_config
from facediff.dataset import load_png, read_manifest
from facediff.losses import RegionDiscriminators
from facediff.metrics import psnr
from facediff.models import init_adapter_from_denoiser
from facediff.restore import restore
from facediff.train import build_denoiser, build_schedule, train_stage1, train_stage2

REPO = Path(__file__).resolve().parents[1]

STAGE1_LADDER = ((4000, 5e-4), (3000, 2e-4), (2000, 1e-4))
STAGE2_ITERS, STAGE2_BATCH, STAGE2_LR = 500, 48, 3e-4


def main() -> int:
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("toy_run")
    root.mkdir(parents=True, exist_ok=True)
    c = str(REPO / "configs" / "toy.yaml")
    data, val = root / "data", root / "val"

    for argv in (
        ["gen-data", "--config", c, "--out", str(data)],
        ["degrade", "--config", c, "--manifest", str(data / "train_manifest.jsonl"),
         "--data-root", str(data), "--out", str(data)],
        ["degrade", "--config", c, "--manifest", str(data / "val_manifest.jsonl"),
         "--data-root", str(data), "--out", str(val)],
        ["curate", "--config", c, "--manifest", str(data / "pairs_manifest.jsonl"),
         "--out", str(root / "curated")],
    ):
        if cli(argv) != 0:
            return 1

    cfg = load_config(c)
    records = read_manifest(root / "curated" / "curated_manifest.jsonl")
    den = build_denoiser(cfg)
    t0 = time.monotonic()
    for iters, lr in STAGE1_LADDER:
        cfg.train.max_iters = iters
        cfg.train.learning_rate = lr
        log = train_stage1(den, records, cfg, root=data, out_dir=root / "s1")
        print(f"stage 1 phase ({iters} iters @ lr {lr}): "
              f"trailing-100 loss {np.mean(log.column('noise_loss')[-100:]):.4f} "
              f"[{time.monotonic() - t0:.0f}s]", flush=True)

    den.freeze()
    torch.manual_seed(cfg.seed)
    adapter = init_adapter_from_denoiser(den)
    cfg.train.max_iters = STAGE2_ITERS
    cfg.train.batch_size = STAGE2_BATCH
    cfg.train.learning_rate = STAGE2_LR
    log2 = train_stage2(den, adapter, RegionDiscriminators(), records, cfg,
                        root=data, out_dir=root / "s2")
    nl = log2.column("noise_loss")
    print(f"stage 2: leading-100 loss {np.mean(nl[:100]):.4f}, "
          f"trailing-100 loss {np.mean(nl[-100:]):.4f}", flush=True)

    schedule = build_schedule(cfg)
    vrecs = read_manifest(val / "pairs_manifest.jsonl")
    dps, rps = [], []
    for i, r in enumerate(vrecs):
        hq = load_png(data / r.image_path)
        deg = load_png(val / r.degraded_path)
        out = restore(deg, den, adapter, schedule, cfg.sample.num_steps, seed=cfg.seed + i)
        dps.append(psnr(deg, hq))
        rps.append(psnr(out, hq))
        print(f"  {r.image_path}: degraded {dps[-1]:.2f} dB -> restored {rps[-1]:.2f} dB",
              flush=True)
    print(f"mean degraded {np.mean(dps):.3f} dB, mean restored {np.mean(rps):.3f} dB "
          f"[{time.monotonic() - t0:.0f}s total]")
    return 0


if __name__ == "__main__":
    sys.exit(main())
