"""Dataset persistence: PNG images, one annotation JSON per image, and a manifest."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Optional, Sequence, Union

import numpy as np
from PIL import Image

from ..geometry import InstanceAnnotation
from .render import generate_scene
from .spec import DomainSpec, SceneSample

SPLITS = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.70, 0.15, 0.15)

Fractions = Union[Sequence[float], Mapping[str, Sequence[float]]]


class DatasetError(ValueError):
    """Malformed or inconsistent dataset files."""


def split_counts(n: int, fractions: Sequence[float]) -> list[int]:
    """Floor each share, then hand leftovers to the largest remainders (earlier split wins ties)."""
    if len(fractions) != len(SPLITS) or min(fractions) < 0 or not math.isclose(sum(fractions), 1.0, abs_tol=1e-9):
        raise ValueError(f"split fractions must be three non-negative values summing to 1, got {fractions}")
    raw = [n * f for f in fractions]
    counts = [int(math.floor(r + 1e-9)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def _fractions_for(fractions: Fractions, domain: str) -> Sequence[float]:
    if isinstance(fractions, Mapping):
        return fractions[domain]
    return fractions


def _write_json(path: Path, payload: dict) -> None:
    try:
        path.write_text(json.dumps(payload, indent=1, sort_keys=True))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def save_sample(sample: SceneSample, root: Path, stem: str) -> str:
    """Write ``images/<stem>.png`` and ``annotations/<stem>.json``; returns the JSON path relative to root."""
    img_rel = f"images/{stem}.png"
    ann_rel = f"annotations/{stem}.json"
    try:
        Image.fromarray(np.asarray(sample.image, dtype=np.uint8)).save(root / img_rel, format="PNG")
    except OSError as exc:
        raise OSError(f"cannot write {root / img_rel}: {exc}") from exc
    payload = {
        "image": img_rel,
        "domain": sample.domain,
        "seed": sample.seed,
        "instances": [a.to_dict() for a in sample.annotations],
    }
    if sample.requested is not None:
        payload["requested"] = sample.requested
    _write_json(root / ann_rel, payload)
    return ann_rel


def generate_dataset(
    out_dir: Union[str, Path],
    spec_source: DomainSpec,
    spec_target: DomainSpec,
    counts: Sequence[int],
    split_fractions: Fractions = DEFAULT_FRACTIONS,
    seed: int = 0,
) -> Path:
    """Render both domains, split each one independently and write a manifest.

    Sample ``i`` (source first, then target) is rendered from seed ``seed + i``.
    ``split_fractions`` may be one triple for both domains or a per-domain mapping.
    """
    if len(counts) != 2 or sum(counts) <= 0 or min(counts) < 0:
        raise ValueError(f"counts must be two non-negative integers with a positive total, got {counts}")
    root = Path(out_dir)
    for sub in ("images", "annotations"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    splits: dict[str, list[str]] = {s: [] for s in SPLITS}
    index = 0
    for spec, n in ((spec_source, counts[0]), (spec_target, counts[1])):
        sizes = split_counts(n, _fractions_for(split_fractions, spec.name))
        names = []
        for i in range(n):
            sample = generate_scene(spec, seed + index)
            index += 1
            names.append(save_sample(sample, root, f"{spec.name}_{i:05d}"))
        start = 0
        for split, size in zip(SPLITS, sizes):
            splits[split].extend(names[start:start + size])
            start += size
    manifest = {
        "splits": splits,
        "generator": {
            "seed": seed,
            "counts": list(counts),
            "split_fractions": (
                {k: list(v) for k, v in split_fractions.items()} if isinstance(split_fractions, Mapping) else list(split_fractions)
            ),
            "source": spec_source.to_dict(),
            "target": spec_target.to_dict(),
        },
    }
    path = root / "manifest.json"
    _write_json(path, manifest)
    return path


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise DatasetError(f"{path}: file not found") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: malformed JSON ({exc.msg} at line {exc.lineno})") from exc


def _parse_annotations(path: Path, payload: dict, size: tuple[int, int]) -> list[InstanceAnnotation]:
    for key in ("image", "domain", "instances"):
        if key not in payload:
            raise DatasetError(f"{path}: missing field '{key}'")
    if payload["domain"] not in ("source", "target"):
        raise DatasetError(f"{path}: field 'domain' must be source or target, got {payload['domain']!r}")
    h, w = size
    anns = []
    for i, inst in enumerate(payload["instances"]):
        try:
            box = inst["obb"]
            if float(box["w"]) <= 0 or float(box["h"]) <= 0:
                raise DatasetError(f"{path}: instances[{i}].obb has non-positive w/h")
            ann = InstanceAnnotation.from_dict(inst)
        except DatasetError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: instances[{i}] invalid ({exc})") from exc
        x0, y0, x1, y1 = ann.bounds()
        if x0 < -0.5 or y0 < -0.5 or x1 > w - 0.5 or y1 > h - 0.5:
            raise DatasetError(f"{path}: instances[{i}] geometry lies outside the {w}x{h} image")
        anns.append(ann)
    return anns


@dataclass
class Manifest:
    path: Path
    splits: dict[str, list[str]]
    generator: dict

    @property
    def root(self) -> Path:
        return self.path.parent


def read_manifest(manifest_path: Union[str, Path]) -> Manifest:
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "manifest.json"
    data = _read_json(path)
    splits = data.get("splits")
    if not isinstance(splits, dict) or any(not isinstance(v, list) for v in splits.values()):
        raise DatasetError(f"{path}: field 'splits' must map split names to file lists")
    return Manifest(path, splits, data.get("generator", {}))


def load_sample(root: Path, rel: str) -> SceneSample:
    ann_path = root / rel
    payload = _read_json(ann_path)
    img_path = root / str(payload.get("image", ""))
    if "image" not in payload:
        raise DatasetError(f"{ann_path}: missing field 'image'")
    if not img_path.is_file():
        raise DatasetError(f"{ann_path}: image file {img_path} not found")
    with Image.open(img_path) as im:
        image = np.asarray(im.convert("RGB"), dtype=np.uint8)
    anns = _parse_annotations(ann_path, payload, image.shape[:2])
    return SceneSample(image, anns, payload["domain"], int(payload.get("seed", 0)), payload.get("requested"), name=rel)


def load_dataset(manifest_path: Union[str, Path], split: Optional[str] = None, domain: Optional[str] = None) -> Iterator[SceneSample]:
    """Lazily yield samples of one split (or all), optionally of one domain."""
    manifest = read_manifest(manifest_path)
    names = []
    for name in SPLITS if split is None else (split,):
        if name not in manifest.splits:
            raise DatasetError(f"{manifest.path}: split '{name}' not in manifest")
        names.extend(manifest.splits[name])
    for rel in names:
        sample = load_sample(manifest.root, rel)
        if domain is None or sample.domain == domain:
            yield sample
