import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maadnet.data import (
    Affine,
    AugmentConfig,
    DatasetError,
    DomainSpec,
    Normalization,
    augment,
    generate_dataset,
    generate_scene,
    hflip,
    leaf_mask,
    load_dataset,
    read_manifest,
    rot90,
    source_spec,
    split_counts,
    target_spec,
    zoom_out,
)
from maadnet.data.augment import hflip_affine, rot90_affine, zoom_out_affine
from maadnet.geometry import obb_iou, obb_to_polygon
from maadnet.stats import image_stats

from oracles import _inside_convex


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    generate_dataset(out, source_spec(), target_spec(), (20, 20), seed=3)
    return out


def annotation_points(sample):
    return np.vstack([np.vstack([a.stem.array, a.vein.array, [[a.obb.cx, a.obb.cy]]]) for a in sample.annotations])


# -- specs and scenes ---------------------------------------------------------------------

def test_spec_validation():
    with pytest.raises(ValueError):
        DomainSpec(leaves_per_image=(5, 2))
    with pytest.raises(ValueError):
        DomainSpec(brightness=0.0)
    with pytest.raises(ValueError):
        DomainSpec(leaf_scale=(0.5, 0.1))


def test_spec_dict_round_trip():
    spec = target_spec()
    assert DomainSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


def test_single_leaf_spec():
    spec = replace(source_spec(), leaves_per_image=(1, 1))
    for seed in range(5):
        assert len(generate_scene(spec, seed).annotations) == 1


def test_scene_is_deterministic():
    a, b = generate_scene(source_spec(), 11), generate_scene(source_spec(), 11)
    assert a.image.tobytes() == b.image.tobytes()
    assert a.annotations == b.annotations
    assert generate_scene(source_spec(), 12).image.tobytes() != a.image.tobytes()


def test_crowded_spec_records_shortfall():
    spec = replace(source_spec(), leaves_per_image=(60, 60), retry_budget=5)
    sample = generate_scene(spec, 0)
    assert len(sample.annotations) < 60
    assert sample.requested == 60


@pytest.mark.parametrize("spec_fn", [source_spec, target_spec])
def test_annotations_valid_and_boxes_cover_leaf_mask(spec_fn):
    spec = spec_fn()
    for seed in range(10):
        sample = generate_scene(spec, seed)
        size = spec.image_size
        for ann in sample.annotations:
            x0, y0, x1, y1 = ann.bounds()
            assert x0 >= -0.5 and y0 >= -0.5 and x1 <= size - 0.5 and y1 <= size - 0.5
            mask = leaf_mask(ann.obb, size)
            ys, xs = np.nonzero(mask)
            inside = _inside_convex(obb_to_polygon(ann.obb), np.stack([xs, ys], axis=1).astype(float))
            assert inside.mean() >= 0.9


def test_target_domain_darker_and_sparser():
    src = [generate_scene(source_spec(), s) for s in range(100)]
    tgt = [generate_scene(target_spec(), 1000 + s) for s in range(100)]
    counts = np.mean([len(s.annotations) for s in tgt])
    assert 3 <= counts <= 7
    assert counts < np.mean([len(s.annotations) for s in src])
    for field in ("intensity", "brightness", "avg_edge_magnitude"):
        s_mean = np.mean([getattr(image_stats(s.image), field) for s in src])
        t_mean = np.mean([getattr(image_stats(s.image), field) for s in tgt])
        assert t_mean < s_mean, field


# -- splits and files --------------------------------------------------------------------------

@pytest.mark.parametrize(
    "n,fractions,expected",
    [(20, (0.7, 0.15, 0.15), [14, 3, 3]), (10, (0.7, 0.15, 0.15), [7, 2, 1]), (7, (1 / 3, 1 / 3, 1 / 3), [3, 2, 2]), (0, (0.7, 0.15, 0.15), [0, 0, 0])],
)
def test_split_counts(n, fractions, expected):
    assert split_counts(n, fractions) == expected


def test_split_counts_validation():
    with pytest.raises(ValueError):
        split_counts(10, (0.5, 0.4, 0.2))


def test_manifest_split_sizes(tiny_dataset):
    m = read_manifest(tiny_dataset / "manifest.json")
    for split, n in (("train", 14), ("val", 3), ("test", 3)):
        names = m.splits[split]
        assert sum(x.startswith("annotations/source") for x in names) == n
        assert sum(x.startswith("annotations/target") for x in names) == n


def test_empty_counts_rejected(tmp_path):
    with pytest.raises(ValueError):
        generate_dataset(tmp_path, source_spec(), target_spec(), (0, 0))


def test_per_domain_fractions(tmp_path):
    generate_dataset(tmp_path, source_spec(), target_spec(), (5, 10), {"source": (1, 0, 0), "target": (0.6, 0, 0.4)})
    m = read_manifest(tmp_path)
    assert len(m.splits["train"]) == 11 and len(m.splits["test"]) == 4 and not m.splits["val"]


def test_dataset_generation_deterministic(tmp_path):
    for d in ("a", "b"):
        generate_dataset(tmp_path / d, source_spec(), target_spec(), (3, 3), seed=9)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_save_load_round_trip(tiny_dataset):
    m = read_manifest(tiny_dataset)
    loaded = list(load_dataset(tiny_dataset / "manifest.json", "train", domain="target"))
    assert len(loaded) == 14
    for sample in loaded:
        fresh = generate_scene(target_spec(), sample.seed)
        assert sample.annotations == fresh.annotations
        assert np.array_equal(sample.image, fresh.image)
    assert m.generator["seed"] == 3


def test_missing_image_named(tmp_path):
    generate_dataset(tmp_path, source_spec(), target_spec(), (1, 1))
    (tmp_path / "images" / "source_00000.png").unlink()
    with pytest.raises(DatasetError, match="source_00000.png"):
        list(load_dataset(tmp_path / "manifest.json"))


def test_bad_box_names_instance(tmp_path):
    generate_dataset(tmp_path, replace(source_spec(), leaves_per_image=(3, 3)), target_spec(), (1, 0), (1, 0, 0))
    path = tmp_path / "annotations" / "source_00000.json"
    payload = json.loads(path.read_text())
    payload["instances"][1]["obb"]["w"] = 0.0
    path.write_text(json.dumps(payload))
    with pytest.raises(DatasetError, match=r"instances\[1\]"):
        list(load_dataset(tmp_path))


def test_malformed_json_and_out_of_bounds(tmp_path):
    generate_dataset(tmp_path, replace(source_spec(), leaves_per_image=(2, 2)), target_spec(), (2, 0), (1, 0, 0))
    p0 = tmp_path / "annotations" / "source_00000.json"
    p0.write_text("{not json")
    with pytest.raises(DatasetError, match="malformed"):
        list(load_dataset(tmp_path))
    p1 = tmp_path / "annotations" / "source_00001.json"
    payload = json.loads(p1.read_text())
    payload["instances"][0]["obb"]["cx"] = 500.0
    p1.write_text(json.dumps(payload))
    p0.write_text(json.dumps(payload))
    with pytest.raises(DatasetError, match="outside"):
        list(load_dataset(tmp_path))


# -- augmentation --------------------------------------------------------------------------------

@pytest.fixture
def scene():
    return generate_scene(source_spec(), 5)


def test_hflip_point_and_box(scene):
    flipped = hflip(scene)
    w = scene.image.shape[1]
    for a, b in zip(scene.annotations, flipped.annotations):
        assert b.obb.cx == pytest.approx(w - 1 - a.obb.cx)
        assert b.obb.cy == a.obb.cy
        # same rectangle as the -theta convention; the leaf axis keeps pointing base -> tip
        assert math.cos(2 * (b.obb.theta + a.obb.theta)) == pytest.approx(1.0)
        assert obb_iou(b.obb, replace(b.obb, theta=-a.obb.theta)) == pytest.approx(1.0, abs=1e-9)
        np.testing.assert_allclose(b.vein.array[:, 0], w - 1 - a.vein.array[:, 0])
    assert np.array_equal(flipped.image[:, 0], scene.image[:, -1])


def test_rot90_group_property(scene):
    two = rot90(rot90(scene))
    assert np.array_equal(two.image, rot90(scene, 2).image)
    four = rot90(scene, 4)
    assert np.array_equal(four.image, scene.image)
    np.testing.assert_allclose(annotation_points(four), annotation_points(scene), atol=1e-9)
    for a, b in zip(scene.annotations, rot90(rot90(rot90(rot90(scene)))).annotations):
        assert abs(math.remainder(a.obb.theta - b.obb.theta, 2 * math.pi)) < 1e-12


def test_rot90_pixel_consistency(scene):
    r = rot90(scene)
    x, y = 10, 3
    w = scene.image.shape[1]
    assert np.array_equal(r.image[w - 1 - x, y], scene.image[y, x])
    p = rot90_affine(w).points(np.array([x, y], dtype=float))
    assert tuple(p) == (y, w - 1 - x)


def test_zoom_out_halves_geometry(scene):
    z = zoom_out(scene, 2.0, np.random.default_rng(0))
    for a, b in zip(scene.annotations, z.annotations):
        assert b.obb.w == pytest.approx(a.obb.w / 2)
        assert b.obb.h == pytest.approx(a.obb.h / 2)
        assert b.obb.theta == pytest.approx(a.obb.theta)
    # recover the pad offset from one point and check every point against the 0.5 scale
    a0, b0 = scene.annotations[0], z.annotations[0]
    off = np.array([b0.obb.cx, b0.obb.cy]) - (0.5 * np.array([a0.obb.cx, a0.obb.cy]) - 0.25)
    np.testing.assert_allclose(annotation_points(z), 0.5 * annotation_points(scene) - 0.25 + off, atol=1e-12)
    assert z.image.shape == scene.image.shape


def test_zoom_out_pixel_alignment():
    # a single bright 2x2 block shrinks to one pixel at the transformed location
    img = np.zeros((8, 8, 3), dtype=np.uint8)
    img[2:4, 4:6] = 255
    from maadnet.data.spec import SceneSample
    z = zoom_out(SceneSample(img, [], "source", 0), 2.0, np.random.default_rng(1), fill=(0, 0, 0))
    ys, xs = np.nonzero(z.image[..., 0] > 200)
    ox, oy = zoom_out_affine(0.5, (0, 0)).points(np.array([4.5, 2.5]))
    assert len(xs) == 1
    off = (xs[0] - ox, ys[0] - oy)
    assert off[0] == int(off[0]) and off[1] == int(off[1])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_composed_geometric_round_trip(seed):
    rng = np.random.default_rng(seed)
    w = 64
    aff = Affine.identity()
    for _ in range(int(rng.integers(1, 6))):
        op = rng.integers(3)
        if op == 0:
            step = hflip_affine(w)
        elif op == 1:
            step = rot90_affine(w)
        else:
            step = zoom_out_affine(float(rng.integers(32, 65)) / w, rng.integers(0, 20, size=2))
        aff = aff.then(step)
    scene = generate_scene(target_spec(), int(seed % 1000))
    forward = [aff.annotation(a) for a in scene.annotations]
    back = [aff.inverse().annotation(a) for a in forward]
    for a, b in zip(scene.annotations, back):
        np.testing.assert_allclose(b.vein.array, a.vein.array, atol=1e-9)
        np.testing.assert_allclose(b.stem.array, a.stem.array, atol=1e-9)
        assert abs(b.obb.cx - a.obb.cx) < 1e-9 and abs(b.obb.w - a.obb.w) < 1e-9
        assert abs(math.remainder(b.obb.theta - a.obb.theta, 2 * math.pi)) < 1e-9


def test_photometric_ops_keep_annotations(scene):
    cfg = replace(AugmentConfig.none(), jitter_p=1.0, noise_p=1.0, bc_p=1.0)
    out = augment(scene, cfg, np.random.default_rng(0))
    assert out.annotations == scene.annotations
    assert not np.array_equal(out.image, scene.image)
    assert out.image.min() >= 0 and out.image.max() <= 255


def test_augment_deterministic_and_none_is_identity(scene):
    cfg = AugmentConfig()
    a = augment(scene, cfg, np.random.default_rng(4))
    b = augment(scene, cfg, np.random.default_rng(4))
    assert np.array_equal(a.image, b.image) and a.annotations == b.annotations
    same = augment(scene, AugmentConfig.none(), np.random.default_rng(4))
    assert np.array_equal(same.image, scene.image) and same.annotations == scene.annotations


def test_augment_probability_validation():
    with pytest.raises(ValueError):
        AugmentConfig(flip_p=1.5)


def test_normalization_statistics(scene):
    norm = Normalization.from_images([scene.image])
    x = norm.apply(scene.image)
    assert x.shape == (3, 64, 64)
    np.testing.assert_allclose(x.reshape(3, -1).mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(x.reshape(3, -1).std(axis=1), 1, atol=1e-12)
