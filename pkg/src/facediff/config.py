"""Hierarchical run configuration: nested dataclasses loaded from YAML.

A config file is a key/value tree whose sections mirror the dataclass
fields below; unspecified keys keep their defaults, unknown keys are
rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml


@dataclass
class ScheduleConfig:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    kind: str = "linear"


@dataclass
class ModelConfig:
    base_channels: int = 64
    levels: int = 3
    time_dim: int = 128


@dataclass
class LossConfig:
    m: float = -0.5
    s: float = 1.0
    logit_convention: str = "standard"
    t_clip: float = 1e-3
    lambda_d: float = 0.1
    lambda_s: float = 1.0
    # (width, height) in latent cells; 512^2-image defaults are (16, 8) / (10, 6)
    eyes_region: tuple[int, int] = (4, 2)
    mouth_region: tuple[int, int] = (2, 2)


@dataclass
class DegradeConfig:
    blur_sigma: tuple[float, float] = (0.5, 3.0)
    downscale: tuple[float, float] = (1.0, 4.0)
    noise_sigma: tuple[float, float] = (0.0, 15.0)
    jpeg_quality: tuple[int, int] = (60, 100)


@dataclass
class CurateConfig:
    min_face_area: float = 0.1
    min_quality: float = 0.3


@dataclass
class DataConfig:
    num_faces: int = 64
    val_faces: int = 16
    image_size: int = 64
    align: bool = True


@dataclass
class TrainConfig:
    stage: int = 1
    learning_rate: float = 1e-4
    batch_size: int = 8
    max_iters: int = 200
    checkpoint_every: int = 100
    disc_learning_rate: float = 2e-4
    stage1_checkpoint: str | None = None

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.max_iters < 0:
            raise ValueError("learning_rate and batch_size must be positive, max_iters >= 0")


@dataclass
class SampleConfig:
    num_steps: int = 50


@dataclass
class EvalConfig:
    # embedding dimension of the Fréchet feature extractor; each corpus
    # must contain at least fid_dim + 1 images
    fid_dim: int = 8
    fid_seed: int = 1234


@dataclass
class RunConfig:
    seed: int = 0
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    degrade: DegradeConfig = field(default_factory=DegradeConfig)
    curate: CurateConfig = field(default_factory=CurateConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def _build(cls, data: dict, path: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ValueError(f"unknown config key {path}{key}")
        ftype = fields[key].type
        if isinstance(value, dict):
            sub_cls = _SECTION_TYPES.get(key)
            if sub_cls is None:
                raise ValueError(f"config key {path}{key} does not take a mapping")
            kwargs[key] = _build(sub_cls, value, f"{path}{key}.")
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


_SECTION_TYPES = {
    "schedule": ScheduleConfig,
    "model": ModelConfig,
    "loss": LossConfig,
    "degrade": DegradeConfig,
    "curate": CurateConfig,
    "data": DataConfig,
    "train": TrainConfig,
    "sample": SampleConfig,
    "eval": EvalConfig,
}


def load_config(path: str | Path | None = None, seed_override: int | None = None) -> RunConfig:
    """Load a RunConfig from YAML; a missing path yields pure defaults."""
    data = {}
    if path is not None:
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ValueError(f"config root must be a mapping, got {type(data).__name__}")
    cfg = _build(RunConfig, data, "")
    if seed_override is not None:
        cfg.seed = int(seed_override)
    return cfg


def config_to_dict(cfg) -> dict:
    d = dataclasses.asdict(cfg)

    def tuples_to_lists(x):
        if isinstance(x, dict):
            return {k: tuples_to_lists(v) for k, v in x.items()}
        if isinstance(x, tuple):
            return list(x)
        return x

    return tuples_to_lists(d)


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
