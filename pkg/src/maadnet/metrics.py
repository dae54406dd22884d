"""Detection and keypoint evaluation: VOC-style OBB AP, OKS and projected OKS."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Hashable, Mapping, Optional, Sequence

import numpy as np

from .geometry import OrientedBox, obb_iou

log = logging.getLogger(__name__)

OKS_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


def voc_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """Area under the monotonically interpolated precision/recall curve (VOC 2010+)."""
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


@dataclass(frozen=True)
class ScoredItem:
    image_id: Hashable
    score: float
    index: int  # position of the prediction within its image


def _rank(dets: Sequence[ScoredItem]) -> list[ScoredItem]:
    # stable sort: equal scores keep input order
    return sorted(dets, key=lambda d: -d.score)


def _pr_from_flags(tp: np.ndarray, n_gt: int) -> tuple[np.ndarray, np.ndarray]:
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1 - tp)
    rec = ctp / n_gt
    prec = ctp / np.maximum(ctp + cfp, np.finfo(np.float64).eps)
    return rec, prec


def voc_ap_obb(
    detections: Mapping[Hashable, Sequence[tuple[float, OrientedBox]]],
    ground_truths: Mapping[Hashable, Sequence[OrientedBox]],
    iou_threshold: float = 0.5,
) -> float:
    """VOC average precision for oriented boxes over a set of images.

    Detections are processed by descending score; each is compared against
    the ground truth in its image with the highest IoU (first on ties). A hit
    on an unclaimed box is a true positive, everything else a false positive.
    Returns NaN when there is no ground truth at all.
    """
    n_gt = sum(len(g) for g in ground_truths.values())
    if n_gt == 0:
        log.warning("no ground-truth boxes: AP undefined")
        return float("nan")
    items = [ScoredItem(img, float(s), i) for img, dets in detections.items() for i, (s, _) in enumerate(dets)]
    if not items:
        return 0.0
    claimed = {img: [False] * len(g) for img, g in ground_truths.items()}
    tp = np.zeros(len(items))
    for k, item in enumerate(_rank(items)):
        gts = ground_truths.get(item.image_id, ())
        if not gts:
            continue
        box = detections[item.image_id][item.index][1]
        ious = [obb_iou(box, g) for g in gts]
        best = int(np.argmax(ious))
        if ious[best] >= iou_threshold and not claimed[item.image_id][best]:
            claimed[item.image_id][best] = True
            tp[k] = 1.0
    rec, prec = _pr_from_flags(tp, n_gt)
    return voc_ap(rec, prec)


# -- keypoint similarity -------------------------------------------------------------

@dataclass(frozen=True)
class OksConfig:
    kappa: float = 0.1

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")


def _similarity_terms(d2: np.ndarray, scale: float, cfg: OksConfig) -> np.ndarray:
    if scale <= 0:
        raise ValueError("object scale must be positive")
    return np.exp(-d2 / (2.0 * scale * scale * cfg.kappa * cfg.kappa))


def oks(pred_kps: np.ndarray, gt_kps: np.ndarray, scale: float, cfg: OksConfig = OksConfig()) -> float:
    """Mean over keypoints of exp(-d^2 / (2 s^2 kappa^2))."""
    pred = np.asarray(pred_kps, dtype=np.float64).reshape(-1, 2)
    gt = np.asarray(gt_kps, dtype=np.float64).reshape(-1, 2)
    if pred.shape != gt.shape:
        raise ValueError(f"keypoint counts differ: {pred.shape[0]} vs {gt.shape[0]}")
    d2 = np.sum((pred - gt) ** 2, axis=1)
    return float(np.mean(_similarity_terms(d2, scale, cfg)))


@dataclass(frozen=True)
class KeypointGroundTruth:
    """Nominal keypoints of one instance, ordered along the stem-then-vein chain.

    Consecutive keypoints are joined by ground-truth segments; ``parts`` labels
    each keypoint as stem or vein and ``scale`` is sqrt(box area).
    """

    keypoints: np.ndarray
    parts: tuple[str, ...]
    scale: float

    def __post_init__(self):
        kps = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "keypoints", kps)
        if len(kps) < 2:
            raise ValueError("keypoint chain needs at least two points")
        if len(self.parts) != len(kps):
            raise ValueError("one part label per keypoint required")

    def adjacent_segments(self, j: int) -> list[tuple[np.ndarray, np.ndarray]]:
        k = self.keypoints
        segs = []
        if j > 0:
            segs.append((k[j - 1], k[j]))
        if j + 1 < len(k):
            segs.append((k[j], k[j + 1]))
        return segs


def project_to_segment(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return a.copy()
    t = min(max(float((p - a) @ ab) / denom, 0.0), 1.0)
    return a + t * ab


def projected_distances(pred_kps: np.ndarray, gt: KeypointGroundTruth) -> np.ndarray:
    """Squared distance of each prediction to the nearer of its nominal point and its pseudo points."""
    pred = np.asarray(pred_kps, dtype=np.float64).reshape(-1, 2)
    if pred.shape != gt.keypoints.shape:
        raise ValueError(f"keypoint counts differ: {pred.shape[0]} vs {len(gt.keypoints)}")
    d2 = np.empty(len(pred))
    for j, p in enumerate(pred):
        best = float(np.sum((p - gt.keypoints[j]) ** 2))
        for a, b in gt.adjacent_segments(j):
            q = project_to_segment(p, a, b)
            best = min(best, float(np.sum((p - q) ** 2)))
        d2[j] = best
    return d2


def poks(pred_kps: np.ndarray, gt: KeypointGroundTruth, cfg: OksConfig = OksConfig(), subset: Optional[str] = None) -> float:
    """OKS computed against pseudo ground-truth points projected onto adjacent GT segments.

    ``subset`` restricts the average to "stem" or "vein" keypoints.
    """
    terms = _similarity_terms(projected_distances(pred_kps, gt), gt.scale, cfg)
    if subset is not None:
        mask = np.array([p == subset for p in gt.parts])
        if not mask.any():
            raise ValueError(f"instance has no {subset} keypoints")
        terms = terms[mask]
    return float(np.mean(terms))


def oks_subset(pred_kps: np.ndarray, gt: KeypointGroundTruth, cfg: OksConfig = OksConfig(), subset: Optional[str] = None) -> float:
    pred = np.asarray(pred_kps, dtype=np.float64).reshape(-1, 2)
    d2 = np.sum((pred - gt.keypoints) ** 2, axis=1)
    terms = _similarity_terms(d2, gt.scale, cfg)
    if subset is not None:
        terms = terms[np.array([p == subset for p in gt.parts])]
    return float(np.mean(terms))


# -- threshold-averaged AP over a similarity -------------------------------------------

def ap_from_similarity(
    scores: Mapping[Hashable, Sequence[float]],
    similarity: Mapping[Hashable, np.ndarray],
    n_gt_per_image: Mapping[Hashable, int],
    threshold: float,
) -> float:
    """AP at one threshold given per-image (n_det x n_gt) similarity matrices.

    Each detection, in descending score order, claims the unclaimed ground
    truth with the highest similarity, if that similarity reaches the threshold.
    """
    n_gt = sum(n_gt_per_image.values())
    if n_gt == 0:
        return float("nan")
    items = [ScoredItem(img, float(s), i) for img, ss in scores.items() for i, s in enumerate(ss)]
    if not items:
        return 0.0
    claimed = {img: np.zeros(n, dtype=bool) for img, n in n_gt_per_image.items()}
    tp = np.zeros(len(items))
    for k, item in enumerate(_rank(items)):
        n = n_gt_per_image.get(item.image_id, 0)
        if n == 0:
            continue
        sims = np.where(claimed[item.image_id], -np.inf, similarity[item.image_id][item.index])
        best = int(np.argmax(sims))
        if sims[best] >= threshold:
            claimed[item.image_id][best] = True
            tp[k] = 1.0
    rec, prec = _pr_from_flags(tp, n_gt)
    return voc_ap(rec, prec)


def map_over_thresholds(
    scores: Mapping[Hashable, Sequence[float]],
    similarity: Mapping[Hashable, np.ndarray],
    n_gt_per_image: Mapping[Hashable, int],
    thresholds: Sequence[float] = OKS_THRESHOLDS,
) -> float:
    """Mean of per-threshold APs (mAP_{50:95} with the default thresholds)."""
    aps = [ap_from_similarity(scores, similarity, n_gt_per_image, t) for t in thresholds]
    return float(np.mean(aps))


def similarity_matrix(
    preds: Sequence[np.ndarray],
    gts: Sequence[KeypointGroundTruth],
    fn: Callable[[np.ndarray, KeypointGroundTruth], float],
) -> np.ndarray:
    out = np.zeros((len(preds), len(gts)))
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            out[i, j] = fn(p, g)
    return out


def nanmean(values: Sequence[float]) -> float:
    vals = [v for v in values if not math.isnan(v)]
    if len(vals) < len(values):
        log.warning("%d of %d AP values undefined and excluded", len(values) - len(vals), len(values))
    return float(np.mean(vals)) if vals else float("nan")
