"""Domain descriptions for the synthetic scene generator."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Literal, Optional

import numpy as np

from ..geometry import InstanceAnnotation


@dataclass(frozen=True)
class Background:
    kind: Literal["textured", "grass"] = "textured"
    intensity: float = 150.0   # mean gray level before the global brightness factor
    octaves: int = 4           # textured: noise octaves
    contrast: float = 0.35     # relative amplitude of the texture or stroke variation
    stroke_density: float = 0.0  # grass: strokes per 100 pixels

    def __post_init__(self):
        if self.kind not in ("textured", "grass"):
            raise ValueError(f"unknown background kind {self.kind!r}")
        if not 0 <= self.intensity <= 255:
            raise ValueError("background intensity must lie in [0, 255]")
        if self.octaves < 1 or self.contrast < 0 or self.stroke_density < 0:
            raise ValueError("background octaves >= 1, contrast and stroke density >= 0")


@dataclass(frozen=True)
class DomainSpec:
    name: str = "source"
    image_size: int = 64
    leaves_per_image: tuple[int, int] = (2, 25)
    leaf_scale: tuple[float, float] = (0.20, 0.60)   # leaf length as a fraction of image side
    leaf_aspect: tuple[float, float] = (0.30, 0.50)  # leaf width / length
    leaf_color: tuple[float, float, float] = (70.0, 150.0, 60.0)
    background: Background = field(default_factory=Background)
    brightness: float = 1.0
    clutter: float = 0.5     # 0..1, density of distractor blobs
    plants: tuple[int, int] = (1, 2)
    retry_budget: int = 60

    def __post_init__(self):
        lo, hi = self.leaves_per_image
        if not 0 <= lo <= hi:
            raise ValueError(f"leaves_per_image range {self.leaves_per_image} is empty")
        for name in ("leaf_scale", "leaf_aspect"):
            a, b = getattr(self, name)
            if not 0 < a <= b:
                raise ValueError(f"{name} range {(a, b)} is empty or non-positive")
        if not 0 < self.brightness <= 1:
            raise ValueError("brightness factor must lie in (0, 1]")
        if not 0 <= self.clutter <= 1:
            raise ValueError("clutter must lie in [0, 1]")
        if self.image_size < 16 or self.image_size % 4:
            raise ValueError("image size must be a multiple of 4 and at least 16")
        if not 1 <= self.plants[0] <= self.plants[1]:
            raise ValueError("plants range must be non-empty and positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        d = dict(d)
        d["background"] = Background(**d.get("background", {}))
        for key in ("leaves_per_image", "leaf_scale", "leaf_aspect", "leaf_color", "plants"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def source_spec(image_size: int = 64) -> DomainSpec:
    """Bright, high-contrast textured ground; many large leaves."""
    return DomainSpec(
        name="source",
        image_size=image_size,
        leaves_per_image=(2, 25),
        leaf_scale=(0.20, 0.60),
        background=Background("textured", intensity=150.0, octaves=4, contrast=0.45),
        brightness=1.0,
        clutter=0.6,
    )


def target_spec(image_size: int = 64) -> DomainSpec:
    """Darker grass background with fewer, smaller leaves."""
    return DomainSpec(
        name="target",
        image_size=image_size,
        leaves_per_image=(3, 7),
        leaf_scale=(0.10, 0.30),
        leaf_color=(60.0, 130.0, 45.0),
        background=Background("grass", intensity=90.0, octaves=2, contrast=0.15, stroke_density=6.0),
        brightness=0.7,
        clutter=0.1,
        plants=(1, 3),
    )


@dataclass
class SceneSample:
    image: np.ndarray  # H x W x 3, uint8 as generated; float64 after photometric augmentation
    annotations: list[InstanceAnnotation]
    domain: str
    seed: int
    requested: Optional[int] = None  # leaves asked for when fewer could be placed
    name: str = ""
