"""Training configuration, loaded from JSON with unknown keys rejected."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Literal, Optional, Union

from ..data.augment import AugmentConfig
from ..detector import DetectionLossWeights
from ..maad import GrlConfig, MaadObjectiveConfig

METHODS = ("none", "maad", "dann", "mmd")
DEFAULT_MILESTONES = (2000 / 5500, 3500 / 5500, 4500 / 5500)


class ConfigError(ValueError):
    """Invalid or unknown configuration values."""


@dataclass
class ModelConfig:
    backbone_channels: tuple[int, int, int] = (16, 32, 64)
    head_hidden: int = 64
    num_keypoints: int = 8
    haad_filters: tuple[int, ...] = (128, 256, 512, 1)
    laad_filters: tuple[int, ...] = (128, 256, 512, 1)


@dataclass
class EvalConfig:
    score_threshold: float = 0.05
    top_k: int = 30
    refine_keypoints: bool = False
    oks_kappa: float = 0.1


@dataclass
class TrainConfig:
    method: Literal["none", "maad", "dann", "mmd"] = "none"
    label_domain: Literal["source", "target"] = "source"  # "target" trains the oracle
    epochs: int = 300
    batch_size: int = 8
    lr_detector: float = 5e-4
    lr_discriminators: float = 1e-4
    weight_decay: float = 1e-5
    lr_milestones: tuple[float, ...] = DEFAULT_MILESTONES
    lr_factor: float = 0.5
    seed: int = 0
    image_size: int = 64
    objective: MaadObjectiveConfig = field(default_factory=MaadObjectiveConfig)
    loss_weights: DetectionLossWeights = field(default_factory=DetectionLossWeights)
    mmd_weight: float = 0.001
    model: ModelConfig = field(default_factory=ModelConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    eval_every: int = 0
    checkpoint_dir: Optional[str] = None
    max_steps_per_epoch: Optional[int] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.label_domain not in ("source", "target"):
            raise ConfigError("label_domain must be source or target")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError(f"batch_size must be even (equal per-domain halves), got {self.batch_size}")
        ms = tuple(self.lr_milestones)
        if any(not 0 < m < 1 for m in ms) or any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError(f"lr_milestones must be strictly increasing fractions in (0, 1), got {ms}")
        if self.lr_detector <= 0 or self.lr_discriminators <= 0 or self.weight_decay < 0:
            raise ConfigError("learning rates must be positive and weight decay non-negative")
        if not 0 < self.lr_factor <= 1:
            raise ConfigError("lr_factor must lie in (0, 1]")
        if self.image_size % 4:
            raise ConfigError("image_size must be divisible by 4")
        if self.mmd_weight < 0:
            raise ConfigError("mmd_weight must be >= 0")

    @property
    def half_batch(self) -> int:
        return self.batch_size // 2

    @property
    def uses_target_images(self) -> bool:
        return self.method != "none"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return _build(cls, data, "config")

    @classmethod
    def from_json(cls, path: Union[str, Path]) -> "TrainConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"{path}: config file not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON ({exc.msg})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)


_NESTED = {
    "objective": MaadObjectiveConfig,
    "loss_weights": DetectionLossWeights,
    "model": ModelConfig,
    "augment": AugmentConfig,
    "evaluation": EvalConfig,
    "grl": GrlConfig,
}


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _NESTED and isinstance(value, dict):
            value = _build(_NESTED[key], value, f"{where}.{key}")
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc
