"""Penalty-reduced focal loss, masked L1 and the weighted detection objective."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..autodiff import Tensor, ops
from .model import HeadOutputs
from .targets import EncodedTargets

FOCAL_EPS = 1e-7


@dataclass(frozen=True)
class DetectionLossWeights:
    lambda_cp: float = 1.0
    lambda_off: float = 1.0
    lambda_kp: float = 0.1
    lambda_kphm: float = 1.0
    lambda_obb: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be >= 0")

    def scaled(self, factor: float) -> "DetectionLossWeights":
        return DetectionLossWeights(**{f.name: getattr(self, f.name) * factor for f in fields(self)})


def focal_loss(pred: Tensor, gt: np.ndarray, alpha: float = 2.0, beta: float = 4.0) -> Tensor:
    """Pixelwise focal loss on a sigmoid heatmap, normalised by the number of unit peaks."""
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"heatmap shapes differ: {pred.shape} vs {gt.shape}")
    pos = (gt == 1.0).astype(np.float64)
    neg_weight = (1.0 - pos) * (1.0 - gt) ** beta
    p = ops.clamp(pred, FOCAL_EPS, 1.0 - FOCAL_EPS)
    pos_term = ops.power(1.0 - p, alpha) * ops.log(p) * pos
    neg_term = ops.power(p, alpha) * ops.log(1.0 - p) * neg_weight
    npos = max(float(pos.sum()), 1.0)
    return -ops.sum(pos_term + neg_term) / npos


def l1_masked_loss(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Sum of |pred - target| over masked cells (all channels) divided by the masked-cell count."""
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"regression shapes differ: {pred.shape} vs {target.shape}")
    count = max(float(mask.sum()), 1.0)
    return ops.sum(ops.abs(pred - target) * mask) / count


def detection_loss_terms(outputs: HeadOutputs, targets: EncodedTargets) -> dict[str, Tensor]:
    return {
        "cp": focal_loss(outputs.center_heatmap, targets.center_heatmap),
        "off": l1_masked_loss(outputs.offset, targets.offset, targets.mask),
        "kp": l1_masked_loss(outputs.keypoints, targets.keypoints, targets.mask),
        "kphm": focal_loss(outputs.kp_heatmap, targets.kp_heatmap),
        "obb": l1_masked_loss(outputs.obb, targets.obb, targets.mask),
    }


def combine_terms(terms: dict[str, Tensor], w: DetectionLossWeights) -> Tensor:
    weights = {"cp": w.lambda_cp, "off": w.lambda_off, "kp": w.lambda_kp, "kphm": w.lambda_kphm, "obb": w.lambda_obb}
    total = None
    for name in ("cp", "off", "kp", "kphm", "obb"):
        term = terms[name] * weights[name]
        total = term if total is None else total + term
    return total


def detection_loss(outputs: HeadOutputs, targets: EncodedTargets, w: DetectionLossWeights = DetectionLossWeights()) -> Tensor:
    return combine_terms(detection_loss_terms(outputs, targets), w)
