"""Center-point detector for oriented leaf boxes and stem/vein keypoints."""

from .losses import DetectionLossWeights, detection_loss, detection_loss_terms, focal_loss, l1_masked_loss
from .model import (
    HEATMAP_PRIOR_BIAS,
    OUTPUT_STRIDE,
    Backbone,
    BackboneConfig,
    CenterNet,
    HeadConfig,
    HeadOutputs,
    Heads,
)
from .targets import (
    DecodeConfig,
    EncodedTargets,
    decode_detections,
    encode_targets,
    gaussian_radius,
    instance_keypoints,
    keypoint_parts,
)

__all__ = [
    "HEATMAP_PRIOR_BIAS",
    "OUTPUT_STRIDE",
    "Backbone",
    "BackboneConfig",
    "CenterNet",
    "DecodeConfig",
    "DetectionLossWeights",
    "EncodedTargets",
    "HeadConfig",
    "HeadOutputs",
    "Heads",
    "decode_detections",
    "detection_loss",
    "detection_loss_terms",
    "encode_targets",
    "focal_loss",
    "gaussian_radius",
    "instance_keypoints",
    "keypoint_parts",
    "l1_masked_loss",
]
