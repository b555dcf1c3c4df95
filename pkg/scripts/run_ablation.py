#!/usr/bin/env python3
"""Ablation over the timestep-weight parameters (location m, scale s).

Shares one dataset and one stage-1 checkpoint across the grid, then
trains a separate adapter per (m, s) cell with the facial loss enabled,
restores the held-out images, and collects all evaluation reports into a
single summary.csv for side-by-side comparison.

By default this uses a small fast configuration; pass --full to run each
cell at the configs/toy.yaml training budget (hours, not minutes).

Usage: python3 scripts/run_ablation.py [workdir] [--full]
"""

import itertools
import sys
from pathlib import Path

import yaml

from facediff.cli import cli

REPO = Path(__file__).resolve().parents[1]

GRID_M = (-0.5, 0.0, 0.5)
GRID_S = (0.5, 1.0)

FAST_OVERRIDES = {
    "schedule": {"T": 50, "beta_start": 0.002, "beta_end": 0.05},
    "model": {"base_channels": 32, "time_dim": 64},
    "train": {"learning_rate": 0.0005, "batch_size": 8, "max_iters": 200,
              "checkpoint_every": 1000},
    "sample": {"num_steps": 10},
}


def run(argv) -> None:
    code = cli(argv)
    if code != 0:
        raise SystemExit(f"{argv[0]} failed with exit code {code}")


def main() -> int:
    args = [a for a in sys.argv[1:] if a != "--full"]
    full = "--full" in sys.argv[1:]
    root = Path(args[0]) if args else Path("ablation_run")
    root.mkdir(parents=True, exist_ok=True)

    base = yaml.safe_load((REPO / "configs" / "toy.yaml").read_text())
    if not full:
        for key, section in FAST_OVERRIDES.items():
            base.setdefault(key, {}).update(section)
    base_cfg = root / "base.yaml"
    base_cfg.write_text(yaml.safe_dump(base))
    c = str(base_cfg)

    data, val = root / "data", root / "val"
    run(["gen-data", "--config", c, "--out", str(data)])
    run(["degrade", "--config", c, "--manifest", str(data / "train_manifest.jsonl"),
         "--data-root", str(data), "--out", str(data)])
    run(["degrade", "--config", c, "--manifest", str(data / "val_manifest.jsonl"),
         "--data-root", str(data), "--out", str(val)])
    run(["train-stage1", "--config", c, "--manifest", str(data / "pairs_manifest.jsonl"),
         "--data-root", str(data), "--out", str(root / "s1")])

    reports = []
    for m, s in itertools.product(GRID_M, GRID_S):
        name = f"m{m}_s{s}"
        cell = root / "cells" / name
        cell.mkdir(parents=True, exist_ok=True)
        cell_data = dict(base)
        cell_data["loss"] = {"m": m, "s": s, "lambda_d": 0.001, "lambda_s": 0.001}
        cfg = cell / "cfg.yaml"
        cfg.write_text(yaml.safe_dump(cell_data))
        cc = str(cfg)
        print(f"=== cell {name}", flush=True)
        run(["train-stage2", "--config", cc, "--manifest", str(data / "pairs_manifest.jsonl"),
             "--data-root", str(data), "--stage1", str(root / "s1" / "stage1_final.npz"),
             "--out", str(cell / "s2")])
        run(["restore", "--config", cc, "--checkpoint", str(cell / "s2" / "stage2_final.npz"),
             "--images", str(val / "degraded"), "--out", str(cell / "run")])
        run(["eval", "--config", cc, "--restored", str(cell / "run" / "restored"),
             "--reference", str(data / "hq"), "--out", str(cell)])
        reports.append(str(cell / "report.json"))

    run(["report", "--inputs", *reports, "--out", str(root / "summary")])
    print((root / "summary" / "summary.csv").read_text())
    return 0


if __name__ == "__main__":
    sys.exit(main())
