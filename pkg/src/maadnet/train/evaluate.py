"""Decode, match and score a detector on a set of labeled images."""

from __future__ import annotations

import math
from functools import partial
from typing import Sequence

import numpy as np

from ..autodiff import Tensor, no_grad
from ..data.augment import Normalization
from ..data.spec import SceneSample
from ..detector import CenterNet, DecodeConfig, decode_detections
from ..detector.targets import instance_keypoints, keypoint_parts
from ..geometry import Detection, InstanceAnnotation
from ..metrics import KeypointGroundTruth, OksConfig, map_over_thresholds, oks_subset, poks, similarity_matrix, voc_ap_obb
from .config import EvalConfig

EVAL_BATCH = 8


def keypoint_ground_truth(ann: InstanceAnnotation, k: int) -> KeypointGroundTruth:
    return KeypointGroundTruth(instance_keypoints(ann, k), keypoint_parts(k), math.sqrt(ann.obb.area))


def score_detections(
    detections: Sequence[Sequence[Detection]],
    annotations: Sequence[Sequence[InstanceAnnotation]],
    num_keypoints: int = 8,
    kappa: float = 0.1,
) -> dict[str, float]:
    """All report metrics for per-image detections against per-image ground truth, on a 0-100 scale."""
    if len(detections) != len(annotations):
        raise ValueError(f"{len(detections)} detection lists for {len(annotations)} images")
    if not annotations:
        raise ValueError("cannot score an empty split")
    cfg = OksConfig(kappa)
    images = range(len(annotations))
    dets = {i: [(d.score, d.obb) for d in detections[i]] for i in images}
    boxes = {i: [a.obb for a in annotations[i]] for i in images}
    scores = {i: [d.score for d in detections[i]] for i in images}
    n_gt = {i: len(annotations[i]) for i in images}
    gts = {i: [keypoint_ground_truth(a, num_keypoints) for a in annotations[i]] for i in images}
    preds = {i: [d.keypoints for d in detections[i]] for i in images}

    def kp_map(fn) -> float:
        sims = {i: similarity_matrix(preds[i], gts[i], fn) for i in images}
        return map_over_thresholds(scores, sims, n_gt)

    raw = {
        "mAP50_OBB": voc_ap_obb(dets, boxes, 0.5),
        "mAP50_95_OKS": kp_map(partial(oks_subset, cfg=cfg)),
        "mAP50_95_POKS": kp_map(partial(poks, cfg=cfg)),
        "mAP50_95_POKS_stem": kp_map(partial(poks, cfg=cfg, subset="stem")),
        "mAP50_95_POKS_vein": kp_map(partial(poks, cfg=cfg, subset="vein")),
    }
    return {k: 100.0 * v for k, v in raw.items()}


def predict(detector: CenterNet, samples: Sequence[SceneSample], normalization: Normalization, cfg: EvalConfig) -> list[list[Detection]]:
    """Eval-mode detections for each sample, in order."""
    was_training = detector.training
    detector.train(False)
    decode_cfg = DecodeConfig(cfg.score_threshold, cfg.top_k, cfg.refine_keypoints)
    out: list[list[Detection]] = []
    try:
        with no_grad():
            for start in range(0, len(samples), EVAL_BATCH):
                chunk = samples[start:start + EVAL_BATCH]
                x = np.stack([normalization.apply(s.image) for s in chunk])
                heads, _, _ = detector(Tensor(x))
                out.extend(decode_detections(heads, decode_cfg))
    finally:
        detector.train(was_training)
    return out


def evaluate_model(
    detector: CenterNet,
    samples: Sequence[SceneSample],
    normalization: Normalization,
    cfg: EvalConfig = EvalConfig(),
    num_keypoints: int = 8,
) -> dict[str, float]:
    if not samples:
        raise ValueError("cannot evaluate on an empty split")
    dets = predict(detector, samples, normalization, cfg)
    return score_detections(dets, [s.annotations for s in samples], num_keypoints, cfg.oks_kappa)
