"""Geometric and photometric augmentation with consistent annotation transforms."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from ..geometry import InstanceAnnotation, OrientedBox, Polyline, wrap_angle
from .spec import SceneSample


@dataclass(frozen=True)
class Affine:
    """p' = A p + t on pixel-centre coordinates."""

    a: np.ndarray
    t: np.ndarray

    @classmethod
    def identity(cls) -> "Affine":
        return cls(np.eye(2), np.zeros(2))

    def then(self, other: "Affine") -> "Affine":
        """Apply ``self`` first, then ``other``."""
        return Affine(other.a @ self.a, other.a @ self.t + other.t)

    def inverse(self) -> "Affine":
        inv = np.linalg.inv(self.a)
        return Affine(inv, -inv @ self.t)

    def points(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) @ self.a.T + self.t

    @property
    def scale(self) -> float:
        return math.sqrt(abs(np.linalg.det(self.a)))

    def box(self, box: OrientedBox) -> OrientedBox:
        cx, cy = self.points(np.array([box.cx, box.cy]))
        ux, uy = self.a @ np.array([math.cos(box.theta), math.sin(box.theta)])
        s = self.scale
        return OrientedBox(float(cx), float(cy), box.w * s, box.h * s, wrap_angle(math.atan2(uy, ux)))

    def polyline(self, line: Polyline) -> Polyline:
        return Polyline(tuple(map(tuple, self.points(line.array))), line.part)

    def annotation(self, ann: InstanceAnnotation) -> InstanceAnnotation:
        return InstanceAnnotation(self.box(ann.obb), self.polyline(ann.stem), self.polyline(ann.vein))


def hflip_affine(width: int) -> Affine:
    return Affine(np.array([[-1.0, 0.0], [0.0, 1.0]]), np.array([width - 1.0, 0.0]))


def rot90_affine(width: int) -> Affine:
    """Counter-clockwise quarter turn matching ``np.rot90``: (x, y) -> (y, W-1-x)."""
    return Affine(np.array([[0.0, 1.0], [-1.0, 0.0]]), np.array([0.0, width - 1.0]))


def zoom_out_affine(scale: float, offset: Sequence[float]) -> Affine:
    """Shrink by ``scale`` (< 1) under the area-centre resize convention, then shift."""
    ox, oy = offset
    return Affine(np.eye(2) * scale, np.array([0.5 * scale - 0.5 + ox, 0.5 * scale - 0.5 + oy]))


def transform_sample(sample: SceneSample, image: np.ndarray, aff: Affine) -> SceneSample:
    return replace(sample, image=image, annotations=[aff.annotation(a) for a in sample.annotations])


def hflip(sample: SceneSample) -> SceneSample:
    w = sample.image.shape[1]
    return transform_sample(sample, np.ascontiguousarray(sample.image[:, ::-1]), hflip_affine(w))


def rot90(sample: SceneSample, k: int = 1) -> SceneSample:
    out = sample
    for _ in range(k % 4):
        w = out.image.shape[1]
        out = transform_sample(out, np.ascontiguousarray(np.rot90(out.image)), rot90_affine(w))
    return out


def zoom_out(sample: SceneSample, factor: float, rng: np.random.Generator, fill: Optional[Sequence[float]] = None) -> SceneSample:
    """Shrink the image by ``factor`` >= 1 onto a same-size canvas at a random offset."""
    if factor < 1:
        raise ValueError("zoom-out factor must be >= 1")
    h, w = sample.image.shape[:2]
    new_w = max(1, int(round(w / factor)))
    scale = new_w / w
    new_h = h * new_w / w
    if abs(new_h - round(new_h)) > 1e-9:
        raise ValueError(f"zoom-out to width {new_w} gives fractional height for a {h}x{w} image")
    new_h = int(round(new_h))
    src = np.asarray(sample.image, dtype=np.float32)
    small = np.stack(
        [np.asarray(Image.fromarray(src[..., c], mode="F").resize((new_w, new_h), Image.BOX)) for c in range(3)],
        axis=-1,
    ).astype(np.float64)
    ox = int(rng.integers(0, w - new_w + 1))
    oy = int(rng.integers(0, h - new_h + 1))
    fill_rgb = np.asarray(fill if fill is not None else src.reshape(-1, 3).mean(axis=0), dtype=np.float64)
    canvas = np.empty((h, w, 3))
    canvas[:] = fill_rgb
    canvas[oy:oy + new_h, ox:ox + new_w] = small
    return transform_sample(sample, canvas, zoom_out_affine(scale, (ox, oy)))


@dataclass(frozen=True)
class AugmentConfig:
    flip_p: float = 0.5
    rot90_p: float = 0.5
    zoom_p: float = 0.3
    zoom_max: float = 2.0
    jitter_p: float = 0.5
    jitter: float = 0.1        # per-channel gain range +-jitter
    noise_p: float = 0.3
    noise_std: float = 4.0     # gray levels
    bc_p: float = 0.5
    brightness: float = 20.0   # additive shift range +-brightness gray levels
    contrast: float = 0.2      # multiplicative range around the image mean

    def __post_init__(self):
        for name in ("flip_p", "rot90_p", "zoom_p", "jitter_p", "noise_p", "bc_p"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be a probability")
        if self.zoom_max < 1:
            raise ValueError("zoom_max must be >= 1")

    @classmethod
    def none(cls) -> "AugmentConfig":
        return cls(flip_p=0, rot90_p=0, zoom_p=0, jitter_p=0, noise_p=0, bc_p=0)


def augment(sample: SceneSample, cfg: AugmentConfig, rng: np.random.Generator) -> SceneSample:
    """Apply each enabled op with its probability; returns a float64 image in [0, 255]."""
    out = replace(sample, image=np.asarray(sample.image, dtype=np.float64))
    if rng.random() < cfg.flip_p:
        out = hflip(out)
    if rng.random() < cfg.rot90_p:
        out = rot90(out, int(rng.integers(1, 4)))
    if rng.random() < cfg.zoom_p:
        out = zoom_out(out, float(rng.uniform(1.0, cfg.zoom_max)), rng)
    img = out.image
    if rng.random() < cfg.jitter_p:
        img = img * rng.uniform(1 - cfg.jitter, 1 + cfg.jitter, size=3)
    if rng.random() < cfg.bc_p:
        mean = img.mean()
        img = (img - mean) * rng.uniform(1 - cfg.contrast, 1 + cfg.contrast) + mean + rng.uniform(-cfg.brightness, cfg.brightness)
    if rng.random() < cfg.noise_p:
        img = img + rng.normal(0.0, cfg.noise_std, size=img.shape)
    return replace(out, image=np.clip(img, 0.0, 255.0))


@dataclass(frozen=True)
class Normalization:
    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    @classmethod
    def from_images(cls, images: Sequence[np.ndarray]) -> "Normalization":
        pix = np.concatenate([np.asarray(im, dtype=np.float64).reshape(-1, 3) for im in images])
        return cls(tuple(pix.mean(axis=0).tolist()), tuple(np.maximum(pix.std(axis=0), 1e-6).tolist()))

    def apply(self, image: np.ndarray) -> np.ndarray:
        """H x W x 3 in gray levels -> 3 x H x W zero-mean unit-std."""
        img = (np.asarray(image, dtype=np.float64) - np.asarray(self.mean)) / np.asarray(self.std)
        return np.ascontiguousarray(img.transpose(2, 0, 1))
