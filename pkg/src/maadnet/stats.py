"""Per-image appearance statistics and annotation-derived leaf counts and sizes."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .geometry import InstanceAnnotation

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T
EDGE_NORM = 4.0 * math.sqrt(2.0) * 255.0
LUMA = np.array([0.299, 0.587, 0.114])


def _correlate3(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    pad = np.pad(img, 1, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(pad, (3, 3))
    return np.einsum("ijkl,kl->ij", win, kernel)


def sobel_edge_magnitude(gray: np.ndarray) -> float:
    """Mean Sobel gradient magnitude of a 0..255 grayscale image, scaled into [0, 1]."""
    img = np.asarray(gray, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 3:
        raise ValueError(f"need a 2-D image of at least 3x3, got shape {img.shape}")
    gx = _correlate3(img, SOBEL_X)
    gy = _correlate3(img, SOBEL_Y)
    return float(np.mean(np.hypot(gx, gy)) / EDGE_NORM)


def grayscale(rgb: np.ndarray) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float64) @ LUMA


@dataclass(frozen=True)
class ImageStats:
    intensity: float
    brightness: float
    avg_edge_magnitude: float


def image_stats(rgb: np.ndarray) -> ImageStats:
    img = np.asarray(rgb)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 RGB, got {img.shape}")
    gray = grayscale(img)
    return ImageStats(
        intensity=float(gray.mean()),
        brightness=float(img.max(axis=2).astype(np.float64).mean() / 255.0),
        avg_edge_magnitude=sobel_edge_magnitude(gray),
    )


@dataclass(frozen=True)
class MeanStd:
    mean: float
    std: float

    @classmethod
    def of(cls, values: Sequence[float]) -> "MeanStd":
        arr = np.asarray(values, dtype=np.float64)
        return cls(float(arr.mean()), float(arr.std()))


@dataclass(frozen=True)
class DatasetStats:
    images: int
    leaves_per_image: MeanStd
    leaf_width_pct: MeanStd
    leaf_height_pct: MeanStd
    intensity: MeanStd | None = None
    brightness: MeanStd | None = None
    avg_edge_magnitude: MeanStd | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def flat(self) -> dict[str, float]:
        row: dict[str, float] = {"images": self.images}
        for key, value in asdict(self).items():
            if isinstance(value, dict):
                row[f"{key}_mean"] = value["mean"]
                row[f"{key}_std"] = value["std"]
        return row


def annotation_stats(
    annotations: Iterable[Sequence[InstanceAnnotation]],
    image_size: tuple[int, int],
    images: Iterable[np.ndarray] | None = None,
) -> DatasetStats:
    """Leaf counts per image and axis-aligned leaf extents as percent of the image.

    ``image_size`` is (height, width). When ``images`` is given, appearance
    statistics are aggregated as well.
    """
    height, width = image_size
    counts, widths, heights = [], [], []
    for anns in annotations:
        counts.append(len(anns))
        for ann in anns:
            ew, eh = ann.obb.axis_extent()
            widths.append(min(100.0 * ew / width, 100.0))
            heights.append(min(100.0 * eh / height, 100.0))
    if not counts:
        raise ValueError("cannot summarise an empty dataset")
    extra = {}
    if images is not None:
        per = [image_stats(img) for img in images]
        if len(per) != len(counts):
            raise ValueError(f"{len(per)} images for {len(counts)} annotation lists")
        for name in ("intensity", "brightness", "avg_edge_magnitude"):
            extra[name] = MeanStd.of([getattr(s, name) for s in per])
    return DatasetStats(
        images=len(counts),
        leaves_per_image=MeanStd.of(counts),
        leaf_width_pct=MeanStd.of(widths or [0.0]),
        leaf_height_pct=MeanStd.of(heights or [0.0]),
        **extra,
    )


GAP_METRICS = ("intensity", "brightness", "avg_edge_magnitude", "leaves_per_image", "leaf_width_pct", "leaf_height_pct")


def domain_gap_rows(source: DatasetStats, target: DatasetStats) -> list[dict]:
    """One row per statistic: both domains' mean/std and whether the target is lower."""
    rows = []
    for name in GAP_METRICS:
        s, t = getattr(source, name), getattr(target, name)
        if s is None or t is None:
            continue
        rows.append({
            "metric": name,
            "source_mean": s.mean,
            "source_std": s.std,
            "target_mean": t.mean,
            "target_std": t.std,
            "target_lower": t.mean < s.mean,
        })
    return rows
