"""Run configuration: a YAML file is the single source of truth; command-line
overrides are ``section.key=value`` strings validated against the schema
before any work starts."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .losses import LossWeights
from .training import ShortcutTrainConfig, TeacherTrainConfig


@dataclass
class DataConfig:
    num_videos: int = 8
    holdout_videos: int = 2
    num_frames: int = 24
    height: int = 64
    width: int = 128
    motion_px_per_frame: float = 1.5
    num_shapes: int = 6
    seed: int = 0
    task: str = "color_invert"


@dataclass
class TeacherConfig:
    base_width: int = 32
    steps: int = 600
    lr: float = 2e-4
    l1_weight: float = 100.0
    seed: int = 0


@dataclass
class ShortcutConfigSection:
    steps: int = 2000
    alpha: int = 3
    dependence: str = "medium"
    channel_variant: str = "full"
    batch_size: int = 4
    lr: float = 1e-3
    disc_lr: float = 2e-5
    gan_mode: str = "logistic"
    seed: int = 0
    log_every: int = 25
    lambda_gan: float = 1.0
    lambda_t_gan: float = 1.0
    lambda_feat: float = 5.0
    lambda_align: float = 5.0
    lambda_out: float = 10.0
    lambda_perc: float = 10.0


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    shortcut: ShortcutConfigSection = field(default_factory=ShortcutConfigSection)
    keyframe_variant: str = "teacher"
    seed: int = 0

    def teacher_train_config(self) -> TeacherTrainConfig:
        t = self.teacher
        return TeacherTrainConfig(
            base_width=t.base_width, steps=t.steps, lr=t.lr,
            l1_weight=t.l1_weight, seed=t.seed,
        )

    def shortcut_train_config(self) -> ShortcutTrainConfig:
        s = self.shortcut
        return ShortcutTrainConfig(
            steps=s.steps, alpha=s.alpha, dependence=s.dependence,
            channel_variant=s.channel_variant, batch_size=s.batch_size,
            lr=s.lr, disc_lr=s.disc_lr,
            gan_mode=s.gan_mode, seed=s.seed, log_every=s.log_every,
            weights=LossWeights(
                gan=s.lambda_gan, t_gan=s.lambda_t_gan, feat=s.lambda_feat,
                align=s.lambda_align, out=s.lambda_out, perc=s.lambda_perc,
            ),
        )


_SECTIONS = {"data": DataConfig, "teacher": TeacherConfig, "shortcut": ShortcutConfigSection}


def default_config() -> RunConfig:
    return RunConfig()


def _coerce(value: str, target_type: type):
    if target_type is bool:
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"cannot parse boolean from {value!r}")
    return target_type(value)


def _build_section(cls, mapping: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    for key in mapping:
        if key not in known:
            raise ValueError(f"unknown config key {where}.{key}")
    return cls(**mapping)


def load_config(path: str | Path | None) -> RunConfig:
    """Load a YAML config; ``None`` yields the defaults."""
    if path is None:
        return default_config()
    raw = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"config root must be a mapping, got {type(raw).__name__}")
    kwargs = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ValueError(f"config section {key!r} must be a mapping")
            kwargs[key] = _build_section(_SECTIONS[key], value, key)
        elif key in ("keyframe_variant", "seed"):
            kwargs[key] = value
        else:
            raise ValueError(f"unknown config key {key!r}")
    return RunConfig(**kwargs)


def apply_overrides(config: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``section.key=value`` strings, validating names and types."""
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        dotted, value = item.split("=", 1)
        parts = dotted.split(".")
        if len(parts) == 1:
            target, key = config, parts[0]
        elif len(parts) == 2 and parts[0] in _SECTIONS:
            target, key = getattr(config, parts[0]), parts[1]
        else:
            raise ValueError(f"unknown config path {dotted!r}")
        matching = [f for f in fields(target) if f.name == key]
        if not matching:
            raise ValueError(f"unknown config key {dotted!r}")
        setattr(target, key, _coerce(value, type(getattr(target, key))))
    return config


def save_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(asdict(config), sort_keys=False))
