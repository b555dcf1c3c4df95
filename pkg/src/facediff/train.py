"""Two-stage training.

Stage 1 fine-tunes the denoiser on curated HQ faces with tag
conditioning and the plain noise-prediction loss. Stage 2 freezes the
denoiser and trains the control adapter on degraded/HQ pairs with the
noise loss plus the time-weighted facial loss, alternating with
discriminator updates (discriminators first, generator second, once each
per iteration).

Every run is a pure function of (config, seed, data): batch composition,
timesteps, and noise all come from one serializable RNG stream, so a
checkpoint resume continues bit-for-bit.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import codec
from .checkpoint import (
    CheckpointError,
    arrays_to_optimizer_state,
    load_checkpoint,
    load_module_weights,
    optimizer_to_arrays,
    save_checkpoint,
    state_dict_to_arrays,
)
from .config import RunConfig, config_to_dict
from .dataset import FaceRecord, load_png
from .degrade import DegradationParams, DegradationRanges, degrade, sample_degradation
from .losses import RegionDiscriminators, discriminator_step, facial_loss, total_loss
from .models import ControlAdapter, Denoiser, DenoiserConfig, init_adapter_from_denoiser
from .regions import (
    RegionBoxes,
    TimeWeightParams,
    crop_regions,
    landmarks_to_latent_boxes,
    normalize_timestep,
    time_weight,
)
from .schedule import NoiseSchedule, make_schedule, noise_mse
from .vocab import VOCABULARY

log = logging.getLogger(__name__)

LOG_FIELDS = ["iter", "t", "noise_loss", "facial_loss", "weight", "disc_loss"]


@dataclass
class LossLog:
    """Append-only per-iteration loss records."""

    records: list[dict] = field(default_factory=list)

    def append(self, **kwargs):
        self.records.append({k: kwargs[k] for k in LOG_FIELDS})

    def write_csv(self, path: str | Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=LOG_FIELDS)
            w.writeheader()
            w.writerows(self.records)

    def column(self, name: str) -> list[float]:
        return [r[name] for r in self.records]


def build_denoiser(cfg: RunConfig, seed: int | None = None) -> Denoiser:
    torch.manual_seed(cfg.seed if seed is None else seed)
    return Denoiser(
        DenoiserConfig(
            base_channels=cfg.model.base_channels,
            levels=cfg.model.levels,
            time_dim=cfg.model.time_dim,
            vocab=VOCABULARY,
        )
    )


def build_schedule(cfg: RunConfig) -> NoiseSchedule:
    s = cfg.schedule
    return make_schedule(s.T, s.beta_start, s.beta_end, s.kind)


def time_weight_params(cfg: RunConfig) -> TimeWeightParams:
    return TimeWeightParams(
        m=cfg.loss.m,
        s=cfg.loss.s,
        logit_convention=cfg.loss.logit_convention,
        t_clip=cfg.loss.t_clip,
    )


@dataclass
class TrainingSet:
    """Preloaded tensors for one manifest."""

    latents: torch.Tensor            # (N, 192, h, w)
    tags: list[list[str]]
    degraded: torch.Tensor | None    # (N, 3, H, W)
    boxes: list[RegionBoxes]
    paths: list[str]


def load_training_set(
    records: list[FaceRecord],
    cfg: RunConfig,
    root: str | Path = ".",
    with_pairs: bool = False,
) -> TrainingSet:
    """Load HQ images as latents, optionally with degraded counterparts.

    When a record lacks a stored degraded image, it is synthesized on the
    fly from the record's degradation seed and the configured ranges.
    """
    if not records:
        raise ValueError("empty manifest")
    root = Path(root)
    latents, tags, boxes, paths = [], [], [], []
    degraded = [] if with_pairs else None
    size = cfg.data.image_size
    region_size = (tuple(cfg.loss.eyes_region), tuple(cfg.loss.mouth_region))
    ranges = DegradationRanges(
        blur_sigma=tuple(cfg.degrade.blur_sigma),
        downscale=tuple(cfg.degrade.downscale),
        noise_sigma=tuple(cfg.degrade.noise_sigma),
        jpeg_quality=tuple(cfg.degrade.jpeg_quality),
    )
    for r in records:
        img = load_png(root / r.image_path)
        if img.shape[:2] != (size, size):
            raise ValueError(
                f"{r.image_path}: image is {img.shape[:2]}, config expects {size}x{size}"
            )
        latents.append(codec.encode_for_model(img))
        tags.append(r.annotation.all_tags())
        boxes.append(landmarks_to_latent_boxes(r.landmarks, (size, size), region_size))
        paths.append(r.image_path)
        if with_pairs:
            if r.degraded_path is not None:
                deg = load_png(root / r.degraded_path)
            else:
                dseed = r.degradation_seed if r.degradation_seed is not None else 0
                drng = np.random.default_rng(dseed)
                params = sample_degradation(drng, ranges)
                deg = degrade(img, params, seed=dseed)
            degraded.append(torch.from_numpy(deg.transpose(2, 0, 1).copy()))
    return TrainingSet(
        latents=torch.stack(latents),
        tags=tags,
        degraded=torch.stack(degraded) if with_pairs else None,
        boxes=boxes,
        paths=paths,
    )


def _batch_noise_terms(s: NoiseSchedule, t: int):
    import math

    return math.sqrt(s.alpha_prod[t]), math.sqrt(s.beta_prod[t])


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _rng_from_state(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng


def _nan_abort(path_hint: Path | None, arrays: dict, meta: dict):
    if path_hint is not None:
        snap = path_hint / "nan_abort.npz"
        save_checkpoint(snap, arrays, meta)
        raise FloatingPointError(f"non-finite loss; diagnostic snapshot at {snap}")
    raise FloatingPointError("non-finite loss")


def train_stage1(
    denoiser: Denoiser,
    records: list[FaceRecord],
    cfg: RunConfig,
    root: str | Path = ".",
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
) -> LossLog:
    """Noise-prediction fine-tuning of the denoiser on HQ faces."""
    torch.set_num_threads(1)
    data = load_training_set(records, cfg, root=root, with_pairs=False)
    schedule = build_schedule(cfg)
    opt = torch.optim.AdamW(denoiser.parameters(), lr=cfg.train.learning_rate, weight_decay=1e-4)
    rng = np.random.default_rng(cfg.seed)
    start_iter = 0
    if resume is not None:
        arrays, meta = load_checkpoint(resume)
        if meta.get("stage") != 1:
            raise CheckpointError(f"expected a stage-1 checkpoint, got stage {meta.get('stage')}")
        load_module_weights(denoiser, "denoiser", arrays)
        opt.load_state_dict(arrays_to_optimizer_state("opt", arrays, meta["optimizer"]))
        rng = _rng_from_state(meta["rng_state"])
        start_iter = meta["iteration"]
    losslog = LossLog()
    out_dir = Path(out_dir) if out_dir is not None else None
    n = len(data.latents)
    bs = cfg.train.batch_size

    def checkpoint_arrays():
        arrays = state_dict_to_arrays("denoiser", denoiser.state_dict())
        opt_arrays, opt_meta = optimizer_to_arrays("opt", opt)
        arrays.update(opt_arrays)
        meta = {
            "stage": 1,
            "iteration": it + 1,
            "rng_state": _rng_state(rng),
            "optimizer": opt_meta,
            "config": config_to_dict(cfg),
            "vocab": list(VOCABULARY),
            "model": {
                "base_channels": cfg.model.base_channels,
                "levels": cfg.model.levels,
                "time_dim": cfg.model.time_dim,
            },
        }
        return arrays, meta

    it = start_iter - 1
    for it in range(start_iter, cfg.train.max_iters):
        idx = rng.integers(0, n, size=bs)
        t = int(rng.integers(0, schedule.T))
        eps = torch.from_numpy(
            rng.standard_normal((bs, *data.latents.shape[1:])).astype(np.float32)
        )
        z0 = data.latents[idx]
        a, b = _batch_noise_terms(schedule, t)
        z_t = a * z0 + b * eps
        tt = torch.full((bs,), t, dtype=torch.long)
        batch_tags = [data.tags[i] for i in idx]
        eps_hat = denoiser(z_t, tt, tags=batch_tags)
        loss = noise_mse(eps, eps_hat)
        if not torch.isfinite(loss):
            arrays, meta = checkpoint_arrays()
            _nan_abort(out_dir, arrays, meta)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losslog.append(
            iter=it, t=t, noise_loss=float(loss.detach()), facial_loss=0.0,
            weight=0.0, disc_loss=0.0,
        )
        if out_dir is not None and (it + 1) % cfg.train.checkpoint_every == 0:
            arrays, meta = checkpoint_arrays()
            save_checkpoint(out_dir / f"stage1_{it + 1:06d}.npz", arrays, meta)
    if out_dir is not None and cfg.train.max_iters > start_iter:
        arrays, meta = checkpoint_arrays()
        save_checkpoint(out_dir / "stage1_final.npz", arrays, meta)
        losslog.write_csv(out_dir / "stage1_losses.csv")
    return losslog


def denoiser_from_checkpoint(path: str | Path) -> tuple[Denoiser, dict]:
    """Rebuild a denoiser (architecture + weights) from any checkpoint."""
    arrays, meta = load_checkpoint(path)
    m = meta["model"]
    if tuple(meta["vocab"]) != tuple(VOCABULARY):
        raise CheckpointError("checkpoint vocabulary does not match this build")
    d = Denoiser(
        DenoiserConfig(
            base_channels=m["base_channels"], levels=m["levels"], time_dim=m["time_dim"]
        )
    )
    load_module_weights(d, "denoiser", arrays)
    return d, meta


def stage2_models_from_checkpoint(path: str | Path) -> tuple[Denoiser, ControlAdapter, RegionDiscriminators, dict]:
    arrays, meta = load_checkpoint(path)
    if meta.get("stage") != 2:
        raise CheckpointError(f"expected a stage-2 checkpoint, got stage {meta.get('stage')}")
    d, _ = denoiser_from_checkpoint(path)
    d.freeze()
    adapter = init_adapter_from_denoiser(d)
    load_module_weights(adapter, "adapter", arrays)
    discs = RegionDiscriminators()
    load_module_weights(discs, "discs", arrays)
    return d, adapter, discs, meta


def train_stage2(
    denoiser: Denoiser,
    adapter: ControlAdapter,
    discriminators: RegionDiscriminators,
    records: list[FaceRecord],
    cfg: RunConfig,
    root: str | Path = ".",
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
) -> LossLog:
    """Adapter training with the total loss and alternating updates."""
    torch.set_num_threads(1)
    if not denoiser.frozen or any(p.requires_grad for p in denoiser.parameters()):
        raise ValueError("stage 2 requires a frozen denoiser")
    data = load_training_set(records, cfg, root=root, with_pairs=True)
    schedule = build_schedule(cfg)
    twp = time_weight_params(cfg)
    lam_d, lam_s = cfg.loss.lambda_d, cfg.loss.lambda_s
    use_facial = not (lam_d == 0.0 and lam_s == 0.0)
    opt_g = torch.optim.AdamW(adapter.parameters(), lr=cfg.train.learning_rate, weight_decay=1e-4)
    opt_d = torch.optim.AdamW(
        discriminators.parameters(), lr=cfg.train.disc_learning_rate, weight_decay=1e-4
    )
    rng = np.random.default_rng(cfg.seed)
    start_iter = 0
    if resume is not None:
        arrays, meta = load_checkpoint(resume)
        if meta.get("stage") != 2:
            raise CheckpointError(f"expected a stage-2 checkpoint, got stage {meta.get('stage')}")
        load_module_weights(adapter, "adapter", arrays)
        load_module_weights(discriminators, "discs", arrays)
        opt_g.load_state_dict(arrays_to_optimizer_state("opt_g", arrays, meta["opt_g"]))
        opt_d.load_state_dict(arrays_to_optimizer_state("opt_d", arrays, meta["opt_d"]))
        rng = _rng_from_state(meta["rng_state"])
        start_iter = meta["iteration"]
    losslog = LossLog()
    out_dir = Path(out_dir) if out_dir is not None else None
    n = len(data.latents)
    bs = cfg.train.batch_size
    frozen_before = {k: v.clone() for k, v in denoiser.state_dict().items()}

    def checkpoint_arrays():
        arrays = state_dict_to_arrays("denoiser", denoiser.state_dict())
        arrays.update(state_dict_to_arrays("adapter", adapter.state_dict()))
        arrays.update(state_dict_to_arrays("discs", discriminators.state_dict()))
        g_arrays, g_meta = optimizer_to_arrays("opt_g", opt_g)
        d_arrays, d_meta = optimizer_to_arrays("opt_d", opt_d)
        arrays.update(g_arrays)
        arrays.update(d_arrays)
        meta = {
            "stage": 2,
            "iteration": it + 1,
            "rng_state": _rng_state(rng),
            "opt_g": g_meta,
            "opt_d": d_meta,
            "config": config_to_dict(cfg),
            "vocab": list(VOCABULARY),
            "model": {
                "base_channels": cfg.model.base_channels,
                "levels": cfg.model.levels,
                "time_dim": cfg.model.time_dim,
            },
        }
        return arrays, meta

    it = start_iter - 1
    for it in range(start_iter, cfg.train.max_iters):
        idx = rng.integers(0, n, size=bs)
        t = int(rng.integers(0, schedule.T))
        eps = torch.from_numpy(
            rng.standard_normal((bs, *data.latents.shape[1:])).astype(np.float32)
        )
        z0 = data.latents[idx]
        deg = data.degraded[idx]
        a, b = _batch_noise_terms(schedule, t)
        z_t = a * z0 + b * eps
        tt = torch.full((bs,), t, dtype=torch.long)

        ctrl = adapter(deg, z_t, tt, tags=[])
        eps_hat = denoiser(z_t, tt, tags=[], ctrl=ctrl)
        z0_pred = (z_t - b * eps_hat) / a
        t_norm = normalize_timestep(t, schedule.T, twp.t_clip)

        disc_loss_val = 0.0
        facial_val = 0.0
        weight_val = 0.0
        if use_facial:
            # discriminators first, on detached fakes
            real_eyes, real_mouth, fake_eyes, fake_mouth = [], [], [], []
            for j, i in enumerate(idx):
                bx = data.boxes[i]
                re, rm = crop_regions(z0[j], bx)
                fe, fm = crop_regions(z0_pred[j].detach(), bx)
                real_eyes.append(re)
                real_mouth.append(rm)
                fake_eyes.append(fe)
                fake_mouth.append(fm)
            disc_loss = discriminator_step(
                discriminators,
                {"eyes": torch.stack(real_eyes), "mouth": torch.stack(real_mouth)},
                {"eyes": torch.stack(fake_eyes), "mouth": torch.stack(fake_mouth)},
                optimizer=opt_d,
            )
            disc_loss_val = float(disc_loss)
            facial = z0_pred.new_zeros(())
            for j, i in enumerate(idx):
                facial = facial + facial_loss(
                    z0_pred[j], z0[j], data.boxes[i], t_norm,
                    discriminators, twp, lam_d, lam_s,
                )
            facial = facial / bs
            facial_val = float(facial.detach())
            weight_val = time_weight(t_norm, twp)
        else:
            facial = z0_pred.new_zeros(())

        noise_term = noise_mse(eps, eps_hat)
        loss = total_loss(noise_term, facial)
        if not torch.isfinite(loss):
            arrays, meta = checkpoint_arrays()
            _nan_abort(out_dir, arrays, meta)
        opt_g.zero_grad()
        opt_d.zero_grad()
        loss.backward()
        opt_g.step()
        losslog.append(
            iter=it, t=t, noise_loss=float(noise_term.detach()),
            facial_loss=facial_val, weight=weight_val, disc_loss=disc_loss_val,
        )
        if out_dir is not None and (it + 1) % cfg.train.checkpoint_every == 0:
            arrays, meta = checkpoint_arrays()
            save_checkpoint(out_dir / f"stage2_{it + 1:06d}.npz", arrays, meta)
    for k, v in denoiser.state_dict().items():
        if not torch.equal(v, frozen_before[k]):
            raise RuntimeError(f"frozen denoiser parameter {k} changed during stage 2")
    if out_dir is not None and cfg.train.max_iters > start_iter:
        arrays, meta = checkpoint_arrays()
        save_checkpoint(out_dir / "stage2_final.npz", arrays, meta)
        losslog.write_csv(out_dir / "stage2_losses.csv")
    return losslog
