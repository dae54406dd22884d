"""Procedural plant scenes with exact leaf annotations."""

from __future__ import annotations

import math

import numpy as np
from PIL import Image, ImageDraw

from ..geometry import InstanceAnnotation, OrientedBox, Polyline, obb_to_polygon
from .spec import DomainSpec, SceneSample

MARGIN = 0.5  # keep geometry half a pixel inside the [-0.5, S-0.5] pixel-centre frame


def _value_noise(rng: np.random.Generator, size: int, octaves: int) -> np.ndarray:
    """Sum of bicubically upsampled random grids, rescaled to [-1, 1]."""
    acc = np.zeros((size, size))
    amp = 1.0
    for o in range(octaves):
        cells = min(2 ** (o + 2), size)
        grid = rng.random((cells, cells)).astype(np.float32)
        up = np.asarray(Image.fromarray(grid, mode="F").resize((size, size), Image.BICUBIC), dtype=np.float64)
        acc += amp * up
        amp *= 0.5
    acc -= acc.min()
    peak = acc.max()
    return acc / peak * 2.0 - 1.0 if peak > 0 else acc


def _textured_background(spec: DomainSpec, rng: np.random.Generator) -> np.ndarray:
    s = spec.image_size
    bg = spec.background
    hue = rng.uniform(0.8, 1.2, size=3) * np.array([1.05, 1.0, 0.85])  # soil-like tint
    noise = _value_noise(rng, s, bg.octaves)
    fine = _value_noise(rng, s, 1) * 0.3
    base = bg.intensity * hue
    return base[None, None, :] * (1.0 + bg.contrast * (noise + fine))[..., None]


def _grass_background(spec: DomainSpec, rng: np.random.Generator) -> np.ndarray:
    s = spec.image_size
    bg = spec.background
    base = np.array([0.75, 1.15, 0.6]) * bg.intensity
    canvas = Image.new("RGB", (s, s), tuple(int(round(v)) for v in np.clip(base, 0, 255)))
    draw = ImageDraw.Draw(canvas)
    strokes = int(round(bg.stroke_density * s * s / 100.0))
    for _ in range(strokes):
        x, y = rng.uniform(0, s, size=2)
        ang = rng.normal(-math.pi / 2, 0.35)
        length = rng.uniform(2.0, 7.0)
        shade = base * (1.0 + bg.contrast * rng.uniform(-1, 1))
        color = tuple(int(round(v)) for v in np.clip(shade, 0, 255))
        draw.line([(x, y), (x + length * math.cos(ang), y + length * math.sin(ang))], fill=color, width=1)
    img = np.asarray(canvas, dtype=np.float64)
    return img * (1.0 + 0.5 * bg.contrast * _value_noise(rng, s, bg.octaves))[..., None]


def _segment_distance(px: np.ndarray, py: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    t = np.clip(((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / denom, 0.0, 1.0) if denom > 0 else 0.0
    return np.hypot(px - (a[0] + t * ab[0]), py - (a[1] + t * ab[1]))


def _polyline_distance(px, py, line: Polyline) -> np.ndarray:
    pts = line.array
    return np.min([_segment_distance(px, py, pts[i], pts[i + 1]) for i in range(len(pts) - 1)], axis=0)


def leaf_alpha(box: OrientedBox, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Anti-aliased coverage of the ellipse inscribed in ``box``."""
    c, s = math.cos(box.theta), math.sin(box.theta)
    dx, dy = px - box.cx, py - box.cy
    u = (dx * c + dy * s) / (box.w / 2.0)
    v = (-dx * s + dy * c) / (box.h / 2.0)
    q = np.sqrt(u * u + v * v)
    return np.clip((1.0 - q) * (box.h / 2.0) + 0.5, 0.0, 1.0)


def leaf_mask(box: OrientedBox, size: int) -> np.ndarray:
    py, px = np.mgrid[0:size, 0:size].astype(np.float64)
    return leaf_alpha(box, px, py) > 0.5


def _inside(poly: np.ndarray, size: int) -> bool:
    return bool(poly.min() >= MARGIN - 0.5 and poly.max() <= size - 0.5 - MARGIN)


def _place_leaf(spec: DomainSpec, rng: np.random.Generator, plants: np.ndarray, taken: set) -> InstanceAnnotation | None:
    s = spec.image_size
    for _ in range(spec.retry_budget):
        plant = plants[rng.integers(len(plants))]
        length = rng.uniform(*spec.leaf_scale) * s
        width = length * rng.uniform(*spec.leaf_aspect)
        phi = rng.uniform(-math.pi, math.pi)
        u = np.array([math.cos(phi), math.sin(phi)])
        stem_len = max(1.0, rng.uniform(0.1, 0.3) * length)
        base = plant + u * stem_len
        center = base + u * 0.45 * length
        box = OrientedBox(float(center[0]), float(center[1]), float(length), float(width), float(phi))
        cell = (int(center[0] // 4), int(center[1] // 4))
        if cell in taken or not _inside(obb_to_polygon(box), s):
            continue
        tip = center + u * 0.45 * length
        bend = rng.uniform(-0.1, 0.1) * width
        mid = center + np.array([-u[1], u[0]]) * bend
        ann = InstanceAnnotation(
            box,
            Polyline((tuple(plant), tuple(base)), "stem"),
            Polyline((tuple(base), tuple(mid), tuple(tip)), "vein"),
        )
        taken.add(cell)
        return ann
    return None


def _draw_clutter(img: np.ndarray, spec: DomainSpec, rng: np.random.Generator, px, py) -> None:
    count = int(round(spec.clutter * 8))
    for _ in range(count):
        r = rng.uniform(1.0, 3.5)
        box = OrientedBox(rng.uniform(0, spec.image_size), rng.uniform(0, spec.image_size), 2 * r, 2 * r * rng.uniform(0.5, 1.0), rng.uniform(-math.pi, math.pi))
        a = leaf_alpha(box, px, py)[..., None]
        tone = rng.uniform(60, 220) * np.array([1.0, 0.95, 0.85])
        img[:] = img * (1 - a) + tone * a


def generate_scene(spec: DomainSpec, seed: int) -> SceneSample:
    """Render one scene; identical (spec, seed) pairs give identical bytes."""
    rng = np.random.default_rng(seed)
    s = spec.image_size
    requested = int(rng.integers(spec.leaves_per_image[0], spec.leaves_per_image[1] + 1))
    if spec.background.kind == "textured":
        img = _textured_background(spec, rng)
    else:
        img = _grass_background(spec, rng)
    py, px = np.mgrid[0:s, 0:s].astype(np.float64)
    _draw_clutter(img, spec, rng, px, py)

    n_plants = int(rng.integers(spec.plants[0], spec.plants[1] + 1))
    plants = rng.uniform(0.3 * s, 0.7 * s, size=(n_plants, 2))
    taken: set = set()
    anns = []
    for _ in range(requested):
        ann = _place_leaf(spec, rng, plants, taken)
        if ann is not None:
            anns.append(ann)

    leaf_rgb = np.asarray(spec.leaf_color)
    stem_rgb = leaf_rgb * np.array([1.1, 0.8, 0.7])
    for ann in anns:
        d = _polyline_distance(px, py, ann.stem)
        a = np.clip(1.2 - d, 0.0, 1.0)[..., None]
        img = img * (1 - a) + stem_rgb * a
    for ann in anns:
        tint = leaf_rgb * rng.uniform(0.85, 1.15, size=3)
        a = leaf_alpha(ann.obb, px, py)[..., None]
        # shade slightly darker towards the leaf margin
        shade = 1.0 - 0.25 * (1.0 - a)
        img = img * (1 - a) + tint * shade * a
        rib = np.clip(1.0 - _polyline_distance(px, py, ann.vein), 0.0, 1.0)[..., None] * a
        img = img * (1 - 0.6 * rib) + (tint * 1.5) * 0.6 * rib

    img = np.clip(np.round(img * spec.brightness), 0, 255).astype(np.uint8)
    return SceneSample(img, anns, spec.name, int(seed), requested if len(anns) < requested else None)
