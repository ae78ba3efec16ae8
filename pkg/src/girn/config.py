"""Flat run configuration shared by every CLI command.

Defaults are the desk-scale settings used on the synthetic task; the original
full-size settings are available as :data:`FULL_SIZE_OVERRIDES` (and ship as
``configs/full_size.json``).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .model import RELATION_TYPES, ModelConfig
from .pairing import STRATEGIES
from .skeldata.synth import SynthConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    data_dir: str = ""
    # synthetic data (used by synth, and by other commands when data_dir is empty)
    n_persons: int = 12
    n_classes: int = 8
    n_train: int = 2000
    n_val: int = 250
    n_test: int = 250
    pose_noise_px: float = 1.5
    ball_noise_px: float = 6.0
    side_ambiguity: float = 0.3
    camera_pan_px: float = 3.0
    missing_rate: float = 0.02
    # preprocessing
    raw_frames: int = 41
    frame_stride: int = 2
    max_gap: int = 5
    # model
    relation_types: list = field(default_factory=lambda: list(RELATION_TYPES))
    attention: bool = True
    individual_heads: bool = True
    g_widths: list = field(default_factory=lambda: [32, 32, 32, 32])
    f_widths: list = field(default_factory=lambda: [32, 32, 32])
    connectivity: str = "dense"
    intra_joints: int = 7
    inter_joints: int = 4
    object_joints: int = 7
    dropout: float = 0.0
    init_std: float = 0.25
    individual_factor: float = 2.0
    # training
    lr: float = 1e-3
    batch_size: int = 16
    pretrain_epochs: int = 6
    finetune_epochs: int = 6
    patience: int = 10
    mirror_prob: float = 0.5
    # evaluation experiments
    sweep_displacement: list = field(default_factory=lambda: [0.0, 20.0, 60.0, 120.0])
    sweep_dropout: list = field(default_factory=lambda: [0.0, 0.25, 0.5])
    sweep_repetitions: int = 5
    impute_dropped: bool = False
    grid_connectivity: list = field(default_factory=lambda: list(STRATEGIES))
    grid_joints: list = field(default_factory=lambda: [2, 3, 4, 5, 6, 7])
    pair_budget: int = 3000
    figures: bool = True

    def __post_init__(self):
        self.validate()

    @property
    def frames(self) -> int:
        return (self.raw_frames - 1) // self.frame_stride + 1

    def validate(self):
        bad = [t for t in self.relation_types if t not in RELATION_TYPES]
        if bad or not self.relation_types:
            raise ConfigError(f"relation_types: unknown or empty {bad or self.relation_types}; "
                              f"expected a subset of {list(RELATION_TYPES)}")
        for key in ("connectivity",):
            if getattr(self, key) not in STRATEGIES:
                raise ConfigError(f"{key}: {getattr(self, key)!r} not one of {list(STRATEGIES)}")
        bad = [c for c in self.grid_connectivity if c not in STRATEGIES]
        if bad:
            raise ConfigError(f"grid_connectivity: unknown strategies {bad}")
        for key in ("intra_joints", "inter_joints", "object_joints"):
            if getattr(self, key) not in range(2, 8):
                raise ConfigError(f"{key}: must be in 2..7, got {getattr(self, key)}")
        if self.pair_budget < 1:
            raise ConfigError("pair_budget must be positive")

    # --- conversions -----------------------------------------------------------
    def synth_config(self) -> SynthConfig:
        return SynthConfig(n_persons=self.n_persons, n_classes=self.n_classes,
                           n_train=self.n_train, n_val=self.n_val, n_test=self.n_test,
                           pose_noise_px=self.pose_noise_px, ball_noise_px=self.ball_noise_px,
                           side_ambiguity=self.side_ambiguity, camera_pan_px=self.camera_pan_px,
                           missing_rate=self.missing_rate, frame_count=self.raw_frames)

    def model_config(self, **overrides) -> ModelConfig:
        kw = dict(relation_types=tuple(self.relation_types), attention=self.attention,
                  individual_heads=self.individual_heads, g_widths=tuple(self.g_widths),
                  f_widths=tuple(self.f_widths), frames=self.frames,
                  connectivity=self.connectivity, intra_joints=self.intra_joints,
                  inter_joints=self.inter_joints, object_joints=self.object_joints,
                  dropout=self.dropout, init_std=self.init_std,
                  individual_factor=self.individual_factor)
        kw.update(overrides)
        return ModelConfig(**kw)

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch_size=self.batch_size,
                           pretrain_epochs=self.pretrain_epochs,
                           finetune_epochs=self.finetune_epochs, patience=self.patience,
                           seed=self.seed, mirror_prob=self.mirror_prob)

    def preprocess_kwargs(self) -> dict:
        return {"max_gap": self.max_gap, "stride": self.frame_stride,
                "expected_frames": self.raw_frames}

    def to_dict(self) -> dict:
        return asdict(self)


FULL_SIZE_OVERRIDES = {
    "g_widths": [1000, 1000, 1000, 500],
    "f_widths": [500, 250, 250],
    "dropout": 0.25,
    "init_std": 0.045,
    "lr": 1e-4,
    "pretrain_epochs": 30,
    "finetune_epochs": 30,
}

_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key: str, value, default):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected true/false, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return list(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def config_from_dict(data: dict, base: RunConfig | None = None) -> RunConfig:
    """Merge ``data`` over ``base`` (defaults when omitted); unknown keys are errors."""
    unknown = sorted(set(data) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    merged = (base or RunConfig()).to_dict()
    defaults = RunConfig().to_dict()
    for key, value in data.items():
        merged[key] = _coerce(key, value, defaults[key])
    return RunConfig(**merged)


def load_config(path=None, **overrides) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object of key/value pairs")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(data)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
