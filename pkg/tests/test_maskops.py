import numpy as np
import pytest

from segpaint.maskops import (
    BBox,
    binarize,
    compose_generator_input,
    crop_resize,
    expand_bbox,
    invisible_mask,
    iou,
    paste_mask,
    resize,
)


# --- brute-force per-pixel oracles -----------------------------------------

def oracle_invisible(sf, sv):
    h, w = sf.shape
    out = np.zeros((h, w), dtype=np.float32)
    for i in range(h):
        for j in range(w):
            if sf[i, j] == 1 and sv[i, j] == 0:
                out[i, j] = 1.0
    return out


def oracle_iou(a, b, threshold=0.5):
    inter = union = 0
    h, w = a.shape
    for i in range(h):
        for j in range(w):
            ab = a[i, j] >= threshold
            bb = b[i, j] >= threshold
            if ab and bb:
                inter += 1
            if ab or bb:
                union += 1
    if union == 0:
        return 1.0
    return inter / union


def oracle_compose(img, o, v):
    h, w = o.shape
    out = np.zeros((h, w, 3), dtype=np.float32)
    for i in range(h):
        for j in range(w):
            if v[i, j] >= 0.5:
                out[i, j] = img[i, j]
            elif o[i, j] >= 0.5:
                out[i, j] = (1.0, 0.0, 0.0)
            else:
                out[i, j] = (0.0, 0.0, 1.0)
    return out


def random_hard_mask(rng, shape=(16, 16), p=0.5):
    return (rng.random(shape) < p).astype(np.float32)


# --- invisible_mask ---------------------------------------------------------

def test_invisible_left_right_halves():
    sf = np.ones((4, 4), dtype=np.float32)
    sv = np.zeros((4, 4), dtype=np.float32)
    sv[:, :2] = 1.0
    expected = np.zeros((4, 4), dtype=np.float32)
    expected[:, 2:] = 1.0
    assert np.array_equal(invisible_mask(sf, sv), expected)


def test_invisible_unoccluded_is_empty():
    sf = random_hard_mask(np.random.default_rng(0))
    assert invisible_mask(sf, sf).sum() == 0


def test_invisible_matches_oracle(rng):
    for _ in range(50):
        sf = random_hard_mask(rng)
        sv = sf * random_hard_mask(rng)
        got = invisible_mask(sf, sv)
        assert np.array_equal(got, oracle_invisible(sf, sv))
        # complement laws
        assert np.array_equal(np.maximum(got, sv), sf)
        assert (got * sv).sum() == 0


def test_invisible_rejects_superset_violation():
    sf = np.zeros((4, 4), dtype=np.float32)
    sv = np.zeros((4, 4), dtype=np.float32)
    sv[0, :3] = 1.0
    with pytest.raises(ValueError, match="3 pixels"):
        invisible_mask(sf, sv)


def test_invisible_rejects_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        invisible_mask(np.ones((4, 4)), np.ones((4, 5)))


def test_invisible_rejects_soft_masks():
    with pytest.raises(ValueError, match="not a hard mask"):
        invisible_mask(np.full((4, 4), 0.7), np.zeros((4, 4)))


# --- iou ---------------------------------------------------------------------

def test_iou_identity_disjoint_and_counts():
    a = np.zeros((8, 8), dtype=np.float32)
    a[:4, :4] = 1.0  # 16 px
    assert iou(a, a) == 1.0
    b = np.zeros((8, 8), dtype=np.float32)
    b[4:, 4:] = 1.0
    assert iou(a, b) == 0.0
    c = np.zeros((8, 8), dtype=np.float32)
    c[:2, :2] = 1.0  # 4 px inside a
    assert iou(a, c) == 4 / 16


def test_iou_empty_conventions():
    z = np.zeros((5, 5))
    assert iou(z, z) == 1.0
    assert iou(z, np.ones((5, 5))) == 0.0


def test_iou_matches_oracle_and_symmetry(rng):
    for _ in range(50):
        a = rng.random((16, 16))
        b = rng.random((16, 16))
        got = iou(a, b)
        assert got == oracle_iou(a, b)
        assert got == iou(b, a)
        assert 0.0 <= got <= 1.0


# --- compose_generator_input --------------------------------------------------

def test_compose_identity_when_all_visible(rng):
    img = rng.random((6, 6, 3)).astype(np.float32)
    ones = np.ones((6, 6), dtype=np.float32)
    assert np.array_equal(compose_generator_input(img, ones, ones), img)


def test_compose_all_red_and_all_blue(rng):
    img = rng.random((6, 6, 3)).astype(np.float32)
    ones = np.ones((6, 6), dtype=np.float32)
    zeros = np.zeros((6, 6), dtype=np.float32)
    red = compose_generator_input(img, ones, zeros)
    assert np.array_equal(red, np.broadcast_to([1, 0, 0], (6, 6, 3)).astype(np.float32))
    blue = compose_generator_input(img, zeros, zeros)
    assert np.array_equal(blue, np.broadcast_to([0, 0, 1], (6, 6, 3)).astype(np.float32))


def test_compose_matches_oracle_and_partitions(rng):
    for _ in range(30):
        img = rng.random((16, 16, 3)).astype(np.float32)
        o = random_hard_mask(rng)
        v = random_hard_mask(rng)
        got = compose_generator_input(img, o, v)
        assert np.array_equal(got, oracle_compose(img, o, v))
        # every pixel is exactly one of: copy, red, blue
        is_copy = np.all(got == img, axis=2)
        is_red = np.all(got == np.array([1, 0, 0], dtype=np.float32), axis=2)
        is_blue = np.all(got == np.array([0, 0, 1], dtype=np.float32), axis=2)
        assert np.all(is_copy | is_red | is_blue)


def test_compose_rejects_mismatched_masks(rng):
    img = rng.random((6, 6, 3)).astype(np.float32)
    with pytest.raises(ValueError):
        compose_generator_input(img, np.ones((5, 6)), np.ones((6, 6)))


# --- expand_bbox ---------------------------------------------------------------

def test_expand_zero_is_identity(rng):
    box = BBox(3, 5, 11, 13)
    assert expand_bbox(box, 0.0, 0.0, rng, (20, 20)) == box


def test_expand_ten_percent_exact(rng):
    box = BBox(10, 10, 20, 20)
    got = expand_bbox(box, 0.1, 0.1, rng, (100, 100))
    assert got == BBox(9, 9, 21, 21)


def test_expand_clips_at_image_edge(rng):
    box = BBox(0, 0, 10, 10)
    for _ in range(20):
        got = expand_bbox(box, 0.1, 0.3, rng, (12, 12))
        assert got.x0 >= 0 and got.y0 >= 0
        assert got.x1 <= 12 and got.y1 <= 12
        # result contains the original box
        assert got.x0 <= box.x0 and got.y0 <= box.y0
        assert got.x1 >= box.x1 and got.y1 >= box.y1


def test_expand_rejects_degenerate_box(rng):
    with pytest.raises(ValueError, match="degenerate"):
        expand_bbox(BBox(3, 3, 3, 10), 0.1, 0.2, rng, (20, 20))


def test_expand_rejects_bad_range(rng):
    with pytest.raises(ValueError):
        expand_bbox(BBox(0, 0, 4, 4), 0.3, 0.1, rng, (8, 8))


# --- crop_resize / paste ---------------------------------------------------------

def test_crop_resize_constant_stays_constant():
    img = np.full((20, 20, 3), 0.37, dtype=np.float32)
    out = crop_resize(img, BBox(2, 3, 15, 17), (8, 8))
    assert out.shape == (8, 8, 3)
    assert np.allclose(out, 0.37, atol=1e-6)


def test_upsampled_hard_mask_goes_soft():
    m = np.zeros((2, 2), dtype=np.float32)
    m[0, 0] = 1.0
    out = crop_resize(m, BBox(0, 0, 2, 2), (4, 4))
    assert out.shape == (4, 4)
    assert np.any((out > 0) & (out < 1))
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_down_up_roundtrip_preserves_disk():
    h = w = 64
    ys, xs = np.mgrid[:h, :w]
    disk = (((ys - 32) ** 2 + (xs - 32) ** 2) <= 20 ** 2).astype(np.float32)
    down = resize(disk, (32, 32))
    up = resize(down, (64, 64))
    assert iou(binarize(up), disk) > 0.9


def test_crop_resize_rejects_bad_box(rng):
    img = rng.random((10, 10)).astype(np.float32)
    with pytest.raises(ValueError):
        crop_resize(img, BBox(0, 0, 11, 5), (4, 4))


def test_paste_mask_inverts_crop_roughly():
    canvas = np.zeros((32, 32), dtype=np.float32)
    canvas[8:20, 10:26] = 1.0
    box = BBox(10, 8, 26, 20)
    patch = crop_resize(canvas, box, (24, 24))
    back = paste_mask(patch, box, (32, 32))
    assert iou(binarize(back), canvas) > 0.95


# --- binarize ---------------------------------------------------------------------

def test_binarize_threshold_convention():
    assert np.all(binarize(np.full((3, 3), 0.6)) == 1.0)
    assert np.all(binarize(np.full((3, 3), 0.5)) == 1.0)  # >= keeps the boundary
    assert np.all(binarize(np.full((3, 3), 0.49)) == 0.0)


def test_binarize_idempotent_and_monotone(rng):
    m = rng.random((16, 16))
    once = binarize(m)
    assert np.array_equal(binarize(once), once)
    low = binarize(m, 0.3)
    high = binarize(m, 0.7)
    assert np.all(high <= low)


def test_binarize_rejects_bad_threshold():
    with pytest.raises(ValueError):
        binarize(np.zeros((2, 2)), 1.0)
