"""Ground-truth encoding onto the output grid and decoding of head outputs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..geometry import Detection, InstanceAnnotation, OrientedBox
from .model import OUTPUT_STRIDE, HeadOutputs

STEM_FRACTIONS = (0.0, 0.5, 1.0)
VEIN_FRACTIONS = (0.2, 0.4, 0.6, 0.8, 1.0)
MIN_OVERLAP = 0.3


def keypoint_layout(k: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Arc-length fractions for the stem and vein parts of a K-point chain.

    The stem always gets three points ending at the leaf base; the vein gets
    the remaining K-3 points, evenly spaced after the base and ending at the tip.
    """
    if k == 8:
        return STEM_FRACTIONS, VEIN_FRACTIONS
    if k < 4:
        raise ValueError(f"need at least four keypoints, got {k}")
    nv = k - 3
    return STEM_FRACTIONS, tuple((i + 1) / nv for i in range(nv))


def keypoint_parts(k: int) -> tuple[str, ...]:
    stem, vein = keypoint_layout(k)
    return ("stem",) * len(stem) + ("vein",) * len(vein)


def instance_keypoints(ann: InstanceAnnotation, k: int) -> np.ndarray:
    stem, vein = keypoint_layout(k)
    return np.vstack([ann.stem.resample(stem), ann.vein.resample(vein)])


def gaussian_radius(height: float, width: float, min_overlap: float = MIN_OVERLAP) -> float:
    """Largest corner shift keeping IoU >= ``min_overlap`` in all three standard cases."""
    a1 = 1.0
    b1 = height + width
    c1 = width * height * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 + math.sqrt(b1**2 - 4 * a1 * c1)) / 2
    a2 = 4.0
    b2 = 2 * (height + width)
    c2 = (1 - min_overlap) * width * height
    r2 = (b2 + math.sqrt(b2**2 - 4 * a2 * c2)) / 2
    a3 = 4 * min_overlap
    b3 = -2 * min_overlap * (height + width)
    c3 = (min_overlap - 1) * width * height
    r3 = (b3 + math.sqrt(b3**2 - 4 * a3 * c3)) / 2
    return min(r1, r2, r3)


def draw_gaussian(heatmap: np.ndarray, cx: int, cy: int, radius: int) -> None:
    """Pointwise-max a Gaussian with sigma=(2r+1)/6 centred on cell (cx, cy)."""
    sigma = (2 * radius + 1) / 6.0
    h, w = heatmap.shape
    ys, xs = np.ogrid[-radius:radius + 1, -radius:radius + 1]
    g = np.exp(-(xs * xs + ys * ys) / (2 * sigma * sigma))
    x0, x1 = max(0, cx - radius), min(w, cx + radius + 1)
    y0, y1 = max(0, cy - radius), min(h, cy + radius + 1)
    patch = g[y0 - cy + radius:y1 - cy + radius, x0 - cx + radius:x1 - cx + radius]
    np.maximum(heatmap[y0:y1, x0:x1], patch, out=heatmap[y0:y1, x0:x1])


@dataclass
class EncodedTargets:
    center_heatmap: np.ndarray  # N x 1 x h x w
    offset: np.ndarray          # N x 2 x h x w
    obb: np.ndarray             # N x 4 x h x w
    keypoints: np.ndarray       # N x 2K x h x w
    kp_heatmap: np.ndarray      # N x 1 x h x w
    mask: np.ndarray            # N x 1 x h x w, 1 at object center cells

    @property
    def num_instances(self) -> int:
        return int(self.mask.sum())


def _check_inside(ann: InstanceAnnotation, idx: int, width: int, height: int) -> None:
    x0, y0, x1, y1 = ann.bounds()
    lo = -0.5 - 1e-6  # pixel centres sit at integer coordinates
    if x0 < lo or y0 < lo or x1 > width - lo - 1 or y1 > height - lo - 1:
        raise ValueError(f"instance {idx}: geometry ({x0:.2f},{y0:.2f})-({x1:.2f},{y1:.2f}) leaves the {width}x{height} image")


def encode_single(annotations: Sequence[InstanceAnnotation], image_size: Sequence[int], k: int = 8) -> EncodedTargets:
    """Targets for one image (leading batch axis of size 1).

    When two centres fall in the same cell the larger box owns the
    regression targets; both still splat their Gaussians.
    """
    height, width = image_size
    if height % OUTPUT_STRIDE or width % OUTPUT_STRIDE:
        raise ValueError(f"image size {height}x{width} is not divisible by {OUTPUT_STRIDE}")
    fh, fw = height // OUTPUT_STRIDE, width // OUTPUT_STRIDE
    hm = np.zeros((fh, fw))
    kphm = np.zeros((fh, fw))
    off = np.zeros((2, fh, fw))
    obb = np.zeros((4, fh, fw))
    kps = np.zeros((2 * k, fh, fw))
    mask = np.zeros((fh, fw))
    owner_area = np.zeros((fh, fw))
    s = float(OUTPUT_STRIDE)
    for idx, ann in enumerate(annotations):
        box = ann.obb
        if not (box.w > 0 and box.h > 0):
            raise ValueError(f"instance {idx}: zero-size box")
        _check_inside(ann, idx, width, height)
        fx, fy = box.cx / s, box.cy / s
        cx = min(max(int(math.floor(fx)), 0), fw - 1)
        cy = min(max(int(math.floor(fy)), 0), fh - 1)
        radius = max(0, int(gaussian_radius(box.h / s, box.w / s)))
        draw_gaussian(hm, cx, cy, radius)
        pts = instance_keypoints(ann, k)
        for px, py in pts:
            draw_gaussian(kphm, min(max(int(px // s), 0), fw - 1), min(max(int(py // s), 0), fh - 1), radius)
        if mask[cy, cx] and owner_area[cy, cx] >= box.area:
            continue
        mask[cy, cx] = 1.0
        owner_area[cy, cx] = box.area
        off[:, cy, cx] = (fx - cx, fy - cy)
        obb[:, cy, cx] = (math.log(box.w / s), math.log(box.h / s), math.sin(box.theta), math.cos(box.theta))
        kps[:, cy, cx] = ((pts - (box.cx, box.cy)) / s).reshape(-1)
    return EncodedTargets(hm[None, None], off[None], obb[None], kps[None], kphm[None, None], mask[None, None])


def encode_targets(batch: Sequence[Sequence[InstanceAnnotation]], image_size: Sequence[int], k: int = 8) -> EncodedTargets:
    """Stack per-image targets for a batch of annotation lists."""
    parts = [encode_single(anns, image_size, k) for anns in batch]
    fields = ("center_heatmap", "offset", "obb", "keypoints", "kp_heatmap", "mask")
    return EncodedTargets(**{f: np.concatenate([getattr(p, f) for p in parts], axis=0) for f in fields})


def targets_as_outputs(t: EncodedTargets) -> dict[str, np.ndarray]:
    """Idealised head outputs that reproduce the encoded targets exactly."""
    return {
        "center_heatmap": t.center_heatmap,
        "offset": t.offset,
        "obb": t.obb,
        "keypoints": t.keypoints,
        "kp_heatmap": t.kp_heatmap,
    }


# -- decoding ------------------------------------------------------------------------

def _local_max(hm: np.ndarray, radius: int = 1) -> np.ndarray:
    """Max-pool with a (2r+1)^2 window, stride 1, -inf padding."""
    pad = np.pad(hm, radius, mode="constant", constant_values=-np.inf)
    win = np.lib.stride_tricks.sliding_window_view(pad, (2 * radius + 1, 2 * radius + 1))
    return win.max(axis=(-1, -2))


def find_peaks(hm: np.ndarray, threshold: float, top_k: int) -> list[tuple[float, int, int]]:
    """(score, y, x) of 3x3 local maxima above ``threshold``, best first, ties by raster order."""
    keep = (hm == _local_max(hm)) & (hm >= threshold)
    ys, xs = np.nonzero(keep)
    scores = hm[ys, xs]
    order = np.argsort(-scores, kind="stable")[:top_k]
    return [(float(scores[i]), int(ys[i]), int(xs[i])) for i in order]


@dataclass(frozen=True)
class DecodeConfig:
    score_threshold: float = 0.1
    top_k: int = 50
    refine_keypoints: bool = False
    refine_radius: int = 2
    refine_min_score: float = 0.25


def _snap(kps: np.ndarray, kp_peaks: list[tuple[float, int, int]], cfg: DecodeConfig) -> np.ndarray:
    if not kp_peaks:
        return kps
    s = float(OUTPUT_STRIDE)
    cells = np.array([(x, y) for _, y, x in kp_peaks], dtype=np.float64)
    out = kps.copy()
    for j, (px, py) in enumerate(kps):
        d = np.max(np.abs(cells - (math.floor(px / s), math.floor(py / s))), axis=1)
        near = np.nonzero(d <= cfg.refine_radius)[0]
        if len(near):
            centres = (cells[near] + 0.5) * s
            best = near[int(np.argmin(np.sum((centres - (px, py)) ** 2, axis=1)))]
            out[j] = (cells[best] + 0.5) * s
    return out


def decode_single(maps: dict[str, np.ndarray], cfg: DecodeConfig = DecodeConfig()) -> list[Detection]:
    """Detections for one image from per-image head maps (no batch axis)."""
    s = float(OUTPUT_STRIDE)
    hm = maps["center_heatmap"][0]
    k = maps["keypoints"].shape[0] // 2
    parts = keypoint_parts(k) if k >= 4 else ()
    kp_peaks = []
    if cfg.refine_keypoints:
        kp_peaks = find_peaks(maps["kp_heatmap"][0], cfg.refine_min_score, hm.size)
    dets = []
    for score, y, x in find_peaks(hm, cfg.score_threshold, cfg.top_k):
        ox, oy = maps["offset"][:, y, x]
        cx, cy = (x + ox) * s, (y + oy) * s
        lw, lh, sn, cs = maps["obb"][:, y, x]
        box = OrientedBox(cx, cy, math.exp(lw) * s, math.exp(lh) * s, math.atan2(sn, cs))
        kps = maps["keypoints"][:, y, x].reshape(k, 2) * s + (cx, cy)
        if cfg.refine_keypoints:
            kps = _snap(kps, kp_peaks, cfg)
        dets.append(Detection(score, box, kps, parts))
    return dets


def decode_detections(outputs: HeadOutputs | dict, cfg: DecodeConfig = DecodeConfig()) -> list[list[Detection]]:
    """Per-image detection lists for a batch of head outputs (tensors or arrays)."""
    raw = outputs.as_dict() if isinstance(outputs, HeadOutputs) else outputs
    arrays = {name: np.asarray(getattr(v, "data", v)) for name, v in raw.items()}
    n = arrays["center_heatmap"].shape[0]
    return [decode_single({name: a[i] for name, a in arrays.items()}, cfg) for i in range(n)]
