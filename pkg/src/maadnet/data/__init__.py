"""Synthetic two-domain leaf scenes, augmentation and dataset files."""

from .augment import AugmentConfig, Affine, Normalization, augment, hflip, rot90, zoom_out
from .io import DatasetError, generate_dataset, load_dataset, read_manifest, split_counts
from .render import generate_scene, leaf_mask
from .spec import Background, DomainSpec, SceneSample, source_spec, target_spec

__all__ = [
    "Affine",
    "AugmentConfig",
    "Background",
    "DatasetError",
    "DomainSpec",
    "Normalization",
    "SceneSample",
    "augment",
    "generate_dataset",
    "generate_scene",
    "hflip",
    "leaf_mask",
    "load_dataset",
    "read_manifest",
    "rot90",
    "source_spec",
    "split_counts",
    "target_spec",
    "zoom_out",
]
