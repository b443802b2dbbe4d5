"""JSON-backed run configurations.

Every config file carries a ``schema`` field naming its kind and version.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..augment import JitterConfig
from ..encoder.network import TinyEncoderConfig
from ..exceptions import ConfigurationError
from ..loss import MODES
from ..temporal import DistributionPreset

PRETRAIN_SCHEMA = "cvrl.pretrain/1"
EVAL_SCHEMA = "cvrl.eval/1"
DATA_SCHEMA = "cvrl.data/1"
CONSISTENCY_MODES = ("consistent", "per_frame")


@dataclass(frozen=True)
class DataConfig:
    num_classes: int = 4
    videos_per_class: int = 200
    T_total: int = 128
    H: int = 64
    W: int = 64
    seed: int = 7
    out: str | None = None


@dataclass(frozen=True)
class PretrainConfig:
    dataset: str | None = None
    preset: str = DistributionPreset.DEC_LINEAR.value
    clip_length: int = 16
    temporal_stride: int = 2
    crop_size: tuple[int, int] = (32, 32)
    batch_size: int = 32
    epochs: int = 50
    tau: float = 0.1
    base_lr: float = 0.01
    warmup_epochs: int = 5
    momentum: float = 0.9
    weight_decay: float = 0.0
    encoder: TinyEncoderConfig = field(default_factory=TinyEncoderConfig)
    jitter: JitterConfig = field(default_factory=JitterConfig)
    seed: int = 0
    loss_mode: str = "symmetric"
    consistency: str = "consistent"
    checkpoint_every: int = 0
    out: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "preset", DistributionPreset(self.preset).value)
        object.__setattr__(self, "crop_size", tuple(self.crop_size))
        if self.batch_size < 2:
            raise ConfigurationError(f"batch_size must be >= 2, got {self.batch_size}")
        if not self.tau > 0:
            raise ConfigurationError(f"tau must be > 0, got {self.tau}")
        if self.loss_mode not in MODES:
            raise ConfigurationError(f"loss_mode must be one of {MODES}")
        if self.consistency not in CONSISTENCY_MODES:
            raise ConfigurationError(f"consistency must be one of {CONSISTENCY_MODES}")
        if self.clip_length < 1 or self.temporal_stride < 1 or self.epochs < 1:
            raise ConfigurationError("clip_length, temporal_stride and epochs must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigurationError("need 0 <= warmup_epochs < epochs")

    @property
    def clip_span(self) -> int:
        return (self.clip_length - 1) * self.temporal_stride + 1


@dataclass(frozen=True)
class EvalConfig:
    checkpoint: str | None = None
    dataset: str | None = None
    test_dataset: str | None = None
    clip_length: int = 32
    temporal_stride: int = 2
    crop_size: tuple[int, int] = (32, 32)
    num_dense_clips: int = 10
    num_spatial_crops: int = 3
    probe_views: int = 2
    classifier_epochs: int = 100
    classifier_lr: float = 4.0
    classifier_batch_size: int = 64
    classifier_weight_decay: float = 0.0
    label_fraction: float = 1.0
    fractions: tuple[float, ...] = (0.01, 0.1)
    fine_tune_epochs: int = 60
    fine_tune_lr: float = 0.2
    fine_tune_batch_size: int = 16
    probe_projection: bool = False
    batch_clips: int = 32
    seed: int = 0
    out: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "crop_size", tuple(self.crop_size))
        object.__setattr__(self, "fractions", tuple(self.fractions))
        if not 0 < self.label_fraction <= 1:
            raise ConfigurationError(f"label_fraction must lie in (0, 1], got {self.label_fraction}")
        if self.num_dense_clips < 1 or self.num_spatial_crops < 1 or self.probe_views < 1:
            raise ConfigurationError("num_dense_clips, num_spatial_crops and probe_views must be >= 1")

    @property
    def clip_span(self) -> int:
        return (self.clip_length - 1) * self.temporal_stride + 1


_SCHEMAS = {DataConfig: DATA_SCHEMA, PretrainConfig: PRETRAIN_SCHEMA, EvalConfig: EVAL_SCHEMA}


def config_to_dict(config) -> dict:
    d = {"schema": _SCHEMAS[type(config)]}
    for f in fields(config):
        value = getattr(config, f.name)
        if isinstance(value, TinyEncoderConfig):
            value = value.to_dict()
        elif isinstance(value, JitterConfig):
            value = asdict(value)
        elif isinstance(value, tuple):
            value = list(value)
        d[f.name] = value
    return d


def config_from_dict(cls, d: dict):
    d = dict(d)
    schema = d.pop("schema", _SCHEMAS[cls])
    if schema != _SCHEMAS[cls]:
        raise ConfigurationError(f"expected schema {_SCHEMAS[cls]!r}, got {schema!r}")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    if isinstance(d.get("encoder"), dict):
        d["encoder"] = TinyEncoderConfig.from_dict(d["encoder"])
    if isinstance(d.get("jitter"), dict):
        jit = dict(d["jitter"])
        for key in ("area_range", "aspect_range", "blur_sigma_range"):
            if key in jit:
                jit[key] = tuple(jit[key])
        d["jitter"] = JitterConfig(**jit)
    return cls(**d)


def load_config(cls, path=None, **overrides):
    """Read a JSON config (or start from defaults) and apply non-None overrides."""
    d = json.loads(Path(path).read_text()) if path else {}
    config = config_from_dict(cls, d)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(config, **overrides) if overrides else config


def save_config(config, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(config), indent=2, sort_keys=True))
