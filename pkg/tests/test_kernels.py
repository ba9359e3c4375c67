import numpy as np
import pytest
import torch

from segpaint import kernels


def test_backend_selected():
    assert kernels.BACKEND in ("numba", "numpy")


@pytest.mark.parametrize("shape,out", [((13, 17), (7, 29)), ((1, 5), (4, 4)), ((64, 64), (32, 32))])
def test_resize_backends_agree(shape, out, rng):
    src = rng.random(shape)
    a = kernels._resize_bilinear_loop(src, *out)
    b = kernels._resize_bilinear_numpy(src, *out)
    assert np.allclose(a, b, atol=1e-14)


def test_resize_matches_torch_convention(rng):
    """The documented half-pixel-center convention is the one torch calls
    bilinear with align_corners=False; independent implementations agree."""
    src = rng.random((21, 34))
    ours = kernels.resize_bilinear(src, 50, 13)
    theirs = torch.nn.functional.interpolate(
        torch.from_numpy(src)[None, None], size=(50, 13),
        mode="bilinear", align_corners=False,
    )[0, 0].numpy()
    assert np.allclose(ours, theirs, atol=1e-12)


def test_polygon_backends_agree(rng):
    for _ in range(20):
        k = int(rng.integers(3, 8))
        angles = np.sort(rng.uniform(0, 2 * np.pi, k))
        xs = 16 + 10 * np.cos(angles)
        ys = 16 + 10 * np.sin(angles)
        a = kernels._fill_convex_polygon_loop(xs, ys, 32, 32)
        b = kernels._fill_convex_polygon_numpy(xs, ys, 32, 32)
        assert np.array_equal(a, b)


def test_ellipse_backends_agree(rng):
    for _ in range(20):
        cx, cy = rng.uniform(4, 28, 2)
        rx, ry = rng.uniform(2, 10, 2)
        ang = rng.uniform(0, np.pi)
        a = kernels._fill_ellipse_loop(cx, cy, rx, ry, ang, 32, 32)
        b = kernels._fill_ellipse_numpy(cx, cy, rx, ry, ang, 32, 32)
        assert np.array_equal(a, b)


def test_front_owner_backends_agree(rng):
    sils = (rng.random((5, 16, 16)) > 0.7).astype(np.uint8)
    a = kernels._front_owner_loop(sils)
    b = kernels._front_owner_numpy(sils)
    assert np.array_equal(a, b)


def test_front_owner_empty_stack():
    out = kernels.front_owner(np.zeros((0, 4, 4), dtype=np.uint8))
    assert out.shape == (4, 4)
    assert np.all(out == -1)


def test_ellipse_area_close_to_analytic():
    m = kernels.fill_ellipse(64, 64, 30, 18, 0.3, 128, 128)
    area = m.sum()
    assert abs(area - np.pi * 30 * 18) / (np.pi * 30 * 18) < 0.02


def test_axis_rectangle_polygon_exact():
    xs = np.array([2.0, 10.0, 10.0, 2.0])
    ys = np.array([3.0, 3.0, 9.0, 9.0])
    m = kernels.fill_convex_polygon(xs, ys, 16, 16)
    # pixel centers in [2,10)x[3,9): columns 2..9, rows 3..8
    expected = np.zeros((16, 16), dtype=np.uint8)
    expected[3:9, 2:10] = 1
    assert np.array_equal(m, expected)


def test_resize_rejects_bad_inputs():
    with pytest.raises(ValueError):
        kernels.resize_bilinear(np.zeros((2, 2, 2)), 4, 4)
    with pytest.raises(ValueError):
        kernels.resize_bilinear(np.zeros((2, 2)), 0, 4)
    with pytest.raises(ValueError):
        kernels.fill_ellipse(1, 1, 0, 2, 0, 4, 4)
    with pytest.raises(ValueError):
        kernels.fill_convex_polygon(np.array([1.0, 2.0]), np.array([1.0, 2.0]), 4, 4)
