import dataclasses

import numpy as np
import pytest
from PIL import Image

from segpaint import scenegen
from segpaint.scenegen import (
    DatasetConfig,
    LayeredScene,
    SceneConfig,
    Sprite,
    Texture,
    build_dataset,
    derive_masks,
    generate_scene,
    load_manifest,
    load_sample,
    visible_masks_zorder,
)


def solid(r, g, b):
    return Texture("solid", (r, g, b))


def axis_rect(x0, y0, x1, y1, color, rank):
    return Sprite(
        kind="rectangle",
        cx=(x0 + x1) / 2, cy=(y0 + y1) / 2,
        rx=(x1 - x0) / 2, ry=(y1 - y0) / 2,
        angle=0.0, texture=solid(*color), depth_rank=rank,
    )


# --- generate_scene ---------------------------------------------------------

def test_single_sprite_scene_has_no_occlusion():
    cfg = SceneConfig(sprite_count=(1, 1))
    scene = generate_scene(cfg, np.random.default_rng(0))
    assert len(scene.sprites) == 1
    samples = derive_masks(scene)
    assert len(samples) == 1
    assert samples[0].si.sum() == 0
    assert samples[0].occluders == ()


def test_generate_scene_deterministic():
    cfg = SceneConfig()
    a = generate_scene(cfg, np.random.default_rng(7))
    b = generate_scene(cfg, np.random.default_rng(7))
    assert np.array_equal(a.render(), b.render())
    assert a.sprites == b.sprites


def test_generated_silhouettes_meet_minimum():
    cfg = SceneConfig(sprite_count=(5, 10), min_silhouette=40)
    scene = generate_scene(cfg, np.random.default_rng(3))
    for sil in scene.silhouettes():
        assert int(sil.sum()) >= 40


def test_occlusion_enforced_with_two_sprites():
    cfg = SceneConfig(sprite_count=(2, 2), occlusion_prob=1.0)
    for seed in range(10):
        scene = generate_scene(cfg, np.random.default_rng(seed))
        sils = scene.silhouettes()
        assert np.any(sils.sum(axis=0) > 1), f"no overlap at seed {seed}"


def test_unsatisfiable_config_rejected():
    with pytest.raises(ValueError, match="larger than canvas"):
        generate_scene(SceneConfig(size_range=(0.5, 1.5)), np.random.default_rng(0))
    with pytest.raises(ValueError, match="exceeds canvas area"):
        generate_scene(
            SceneConfig(width=8, height=8, min_silhouette=1000), np.random.default_rng(0)
        )


def test_scene_rejects_duplicate_ranks():
    s1 = axis_rect(2, 2, 10, 10, (255, 0, 0), 0)
    s2 = axis_rect(4, 4, 12, 12, (0, 255, 0), 0)
    with pytest.raises(ValueError, match="unique"):
        LayeredScene(16, 16, solid(9, 9, 9), [s1, s2])


# --- derive_masks -----------------------------------------------------------

def test_two_rectangle_overlap_analytic():
    """Known geometry: back rectangle's hidden region equals the analytic
    intersection of the two rectangles, pixel for pixel."""
    front = axis_rect(2, 3, 10, 9, (200, 10, 10), 0)
    back = axis_rect(6, 5, 14, 13, (10, 200, 10), 1)
    scene = LayeredScene(16, 16, solid(1, 2, 3), [front, back])
    samples = derive_masks(scene, min_visible=1)
    by_id = {s.object_id: s for s in samples}

    si_back = by_id[1].si
    expected = np.zeros((16, 16), dtype=np.float32)
    expected[5:9, 6:10] = 1.0  # [6,10)x[5,9) pixel centers
    assert np.array_equal(si_back, expected)
    assert by_id[1].occluders == (0,)
    assert by_id[0].si.sum() == 0


def test_fully_covered_sprite_dropped():
    front = axis_rect(1, 1, 15, 15, (200, 10, 10), 0)
    hidden = axis_rect(4, 4, 8, 8, (10, 200, 10), 1)
    scene = LayeredScene(16, 16, solid(1, 2, 3), [front, hidden])
    samples = derive_masks(scene, min_visible=10)
    assert [s.object_id for s in samples] == [0]


def test_mask_invariants_on_random_scenes():
    for seed in range(5):
        scene = generate_scene(SceneConfig(), np.random.default_rng(seed))
        sils = scene.silhouettes()
        ranks = [sp.depth_rank for sp in scene.sprites]
        for s in derive_masks(scene):
            assert np.all((s.sv == 1) | (s.sv == 0))
            assert not np.any((s.sv == 1) & (s.si == 1))
            assert np.array_equal(np.maximum(s.sv, s.si), s.sf)
            assert s.sv.sum() >= 10
            # every hidden pixel is covered by some sprite in front
            in_front = [
                q for q in range(len(scene.sprites))
                if ranks[q] < ranks[s.object_id]
            ]
            cover = np.zeros_like(s.si)
            for q in in_front:
                cover = np.maximum(cover, sils[q].astype(np.float32))
            assert np.all(cover[s.si == 1] == 1)


def test_zorder_and_render_compare_agree():
    for seed in range(5):
        scene = generate_scene(SceneConfig(), np.random.default_rng(seed))
        sils = scene.silhouettes()
        sv_z = visible_masks_zorder(scene, sils)
        for s in derive_masks(scene, min_visible=1):
            assert np.array_equal(sv_z[s.object_id].astype(np.float32), s.sv)


def test_bbox_is_tight_around_sf():
    scene = generate_scene(SceneConfig(), np.random.default_rng(2))
    for s in derive_masks(scene):
        ys, xs = np.nonzero(s.sf)
        assert (s.bbox.x0, s.bbox.y0) == (xs.min(), ys.min())
        assert (s.bbox.x1, s.bbox.y1) == (xs.max() + 1, ys.max() + 1)


# --- dataset persistence ------------------------------------------------------

def test_build_dataset_counts_and_files(tmp_path):
    cfg = DatasetConfig(train_scenes=4, test_scenes=2, seed=5)
    man = build_dataset(cfg, tmp_path)
    assert len(man.scenes) == 6
    assert len(man.samples) > 0
    for rec in man.samples:
        for attr in ("image", "sv", "si", "sf", "unoccluded"):
            assert (tmp_path / getattr(rec, attr)).exists()
    # splits share no scene entropy
    train_e = {s.entropy for s in man.scenes if s.split == "train"}
    test_e = {s.entropy for s in man.scenes if s.split == "test"}
    assert not train_e & test_e


def test_rebuild_is_byte_identical(tmp_path):
    cfg = DatasetConfig(train_scenes=2, test_scenes=1, seed=9)
    m1 = build_dataset(cfg, tmp_path / "a")
    m2 = build_dataset(cfg, tmp_path / "b")
    assert [r.sample_key for r in m1.samples] == [r.sample_key for r in m2.samples]
    for r1, r2 in zip(m1.samples, m2.samples):
        for attr in ("image", "sv", "si", "sf", "unoccluded"):
            b1 = (tmp_path / "a" / getattr(r1, attr)).read_bytes()
            b2 = (tmp_path / "b" / getattr(r2, attr)).read_bytes()
            assert b1 == b2, f"{attr} differs for {r1.sample_key}"


def test_empty_dataset_is_valid(tmp_path):
    man = build_dataset(DatasetConfig(train_scenes=0, test_scenes=0), tmp_path)
    assert man.samples == []
    reloaded = load_manifest(tmp_path)
    assert reloaded.samples == []


def test_seed_range_collision_rejected(tmp_path):
    cfg = DatasetConfig(train_scenes=5, test_scenes=5, train_seed_offset=0,
                        test_seed_offset=3)
    with pytest.raises(ValueError, match="overlap"):
        build_dataset(cfg, tmp_path)


def test_load_sample_roundtrip_bit_exact(tmp_path):
    cfg = DatasetConfig(train_scenes=2, test_scenes=0, seed=13)
    man = build_dataset(cfg, tmp_path)
    regen = {}
    for rec in man.scenes:
        rng = scenegen.scene_rng(*rec.entropy)
        scene = generate_scene(cfg.scene, rng)
        regen[rec.scene_key] = {s.object_id: s for s in derive_masks(scene)}
    for i, rec in enumerate(man.samples):
        loaded = load_sample(man, i)
        fresh = regen[rec.scene_key][rec.object_id]
        assert np.array_equal(loaded.sv, fresh.sv)
        assert np.array_equal(loaded.si, fresh.si)
        assert np.array_equal(loaded.sf, fresh.sf)
        assert np.array_equal(loaded.image, fresh.image)
        assert loaded.bbox == fresh.bbox
        assert loaded.occluders == fresh.occluders


def test_load_sample_out_of_range(tiny_manifest):
    with pytest.raises(ValueError, match="out of range"):
        load_sample(tiny_manifest, len(tiny_manifest.samples))


def test_load_sample_missing_file(tmp_path):
    man = build_dataset(DatasetConfig(train_scenes=1, test_scenes=0), tmp_path)
    victim = tmp_path / man.samples[0].sv
    victim.unlink()
    with pytest.raises(ValueError, match=str(victim)):
        load_sample(man, 0)


def test_load_sample_rejects_tampered_masks(tmp_path):
    man = build_dataset(DatasetConfig(train_scenes=1, test_scenes=0), tmp_path)
    rec = man.samples[0]
    sv_path = tmp_path / rec.sv
    sv = np.asarray(Image.open(sv_path)).copy()
    sf = np.asarray(Image.open(tmp_path / rec.sf))
    outside = np.argwhere(sf == 0)
    sv[outside[0][0], outside[0][1]] = 255  # visible pixel outside the full mask
    Image.fromarray(sv).save(sv_path)
    with pytest.raises(ValueError, match="tile the full mask"):
        load_sample(man, 0)


def test_manifest_version_check(tmp_path):
    man = build_dataset(DatasetConfig(train_scenes=0, test_scenes=0), tmp_path)
    doc = (tmp_path / scenegen.MANIFEST_NAME).read_text().replace('"version": 1', '"version": 99')
    (tmp_path / scenegen.MANIFEST_NAME).write_text(doc)
    with pytest.raises(ValueError, match="version"):
        load_manifest(tmp_path)


def test_textures_render_expected_patterns():
    stripes = Texture("stripes", (255, 0, 0), (0, 0, 255), period=4.0, angle=0.0)
    img = stripes.render(8, 8)
    assert np.array_equal(img[0, 0], [255, 0, 0])
    assert np.array_equal(img[0, 4], [0, 0, 255])
    checker = Texture("checker", (10, 10, 10), (200, 200, 200), period=2.0)
    img = checker.render(4, 4)
    assert np.array_equal(img[0, 0], [10, 10, 10])
    assert np.array_equal(img[0, 2], [200, 200, 200])
    assert np.array_equal(img[2, 2], [10, 10, 10])
