"""Oriented boxes, polylines and convex polygon overlap."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

PartLabel = Literal["stem", "vein"]


def wrap_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    t = math.atan2(math.sin(theta), math.cos(theta))
    return math.pi if t == -math.pi else t


@dataclass(frozen=True)
class OrientedBox:
    cx: float
    cy: float
    w: float
    h: float
    theta: float = 0.0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box width/height must be positive, got w={self.w} h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_dict(self) -> dict:
        return {"cx": self.cx, "cy": self.cy, "w": self.w, "h": self.h, "theta_rad": self.theta}

    @classmethod
    def from_dict(cls, d: dict) -> "OrientedBox":
        return cls(float(d["cx"]), float(d["cy"]), float(d["w"]), float(d["h"]), float(d["theta_rad"]))

    def axis_extent(self) -> tuple[float, float]:
        """Width and height of the axis-aligned hull of the rotated box."""
        c, s = abs(math.cos(self.theta)), abs(math.sin(self.theta))
        return self.w * c + self.h * s, self.w * s + self.h * c


@dataclass(frozen=True)
class Polyline:
    points: tuple[tuple[float, float], ...]
    part: PartLabel = "vein"

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) < 2:
            raise ValueError("a polyline needs at least two points")
        for a, b in zip(pts, pts[1:]):
            if a == b:
                raise ValueError(f"consecutive polyline points coincide at {a}")

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64)

    @property
    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.array, axis=0), axis=1)))

    def resample(self, fractions: Sequence[float]) -> np.ndarray:
        """Points at the given fractions of total arc length."""
        pts = self.array
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        targets = np.clip(np.asarray(fractions, dtype=np.float64), 0.0, 1.0) * cum[-1]
        xs = np.interp(targets, cum, pts[:, 0])
        ys = np.interp(targets, cum, pts[:, 1])
        return np.stack([xs, ys], axis=1)


@dataclass
class Detection:
    score: float
    obb: OrientedBox
    keypoints: np.ndarray
    parts: tuple[str, ...] = field(default=())

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 2)
        if not math.isfinite(self.score):
            raise ValueError("detection score must be finite")


def obb_to_polygon(box: OrientedBox) -> np.ndarray:
    """Four corners, counter-clockwise (positive shoelace area)."""
    hw, hh = box.w / 2.0, box.h / 2.0
    local = np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]])
    c, s = math.cos(box.theta), math.sin(box.theta)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([box.cx, box.cy])


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area; positive for counter-clockwise vertices."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _clip(subject: list, a: np.ndarray, b: np.ndarray) -> list:
    """Keep the part of ``subject`` left of the directed edge a->b."""
    def side(p):
        return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])

    out = []
    n = len(subject)
    for i in range(n):
        cur, nxt = subject[i], subject[(i + 1) % n]
        sc, sn = side(cur), side(nxt)
        if sc >= 0:
            out.append(cur)
        if (sc >= 0) != (sn >= 0):
            t = sc / (sc - sn)
            out.append((cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])))
    return out


def convex_intersection_area(p: np.ndarray, q: np.ndarray) -> float:
    """Area of the overlap of two counter-clockwise convex polygons (Sutherland-Hodgman)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if abs(polygon_area(p)) <= 0.0 or abs(polygon_area(q)) <= 0.0:
        return 0.0
    poly = [tuple(v) for v in p]
    for i in range(len(q)):
        if not poly:
            return 0.0
        poly = _clip(poly, q[i], q[(i + 1) % len(q)])
    if len(poly) < 3:
        return 0.0
    return max(polygon_area(np.asarray(poly)), 0.0)


def obb_iou(a: OrientedBox, b: OrientedBox) -> float:
    inter = convex_intersection_area(obb_to_polygon(a), obb_to_polygon(b))
    union = a.area + b.area - inter
    return float(min(max(inter / union, 0.0), 1.0)) if union > 0 else 0.0


@dataclass(frozen=True)
class InstanceAnnotation:
    """One leaf: its oriented box plus stem and vein polylines.

    The stem runs from the plant side to the leaf base; the vein starts at
    the base and ends at the leaf tip.
    """

    obb: OrientedBox
    stem: Polyline
    vein: Polyline

    def __post_init__(self):
        if self.stem.part != "stem" or self.vein.part != "vein":
            raise ValueError("stem/vein polylines carry the wrong part label")
        gap = math.dist(self.stem.points[-1], self.vein.points[0])
        if gap > 1e-6:
            raise ValueError(f"stem end and vein start differ by {gap:.3g}")

    def to_dict(self) -> dict:
        return {
            "obb": self.obb.to_dict(),
            "stem": [list(p) for p in self.stem.points],
            "vein": [list(p) for p in self.vein.points],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InstanceAnnotation":
        return cls(
            OrientedBox.from_dict(d["obb"]),
            Polyline(tuple(tuple(p) for p in d["stem"]), "stem"),
            Polyline(tuple(tuple(p) for p in d["vein"]), "vein"),
        )

    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) over the box corners and both polylines."""
        pts = np.vstack([obb_to_polygon(self.obb), self.stem.array, self.vein.array])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])
