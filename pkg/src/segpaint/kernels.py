"""Per-pixel raster kernels: bilinear resampling, shape fills, layer ownership.

These are the hot inner loops of dataset generation and evaluation. Each
kernel exists twice: a plain-loop version compiled with numba's ``@njit``
and a vectorized pure-numpy version. The active backend is chosen once at
import time from the ``SEGPAINT_BACKEND`` environment variable:

    SEGPAINT_BACKEND=numba   use JIT-compiled loops (default)
    SEGPAINT_BACKEND=numpy   force the pure-numpy fallback

Both paths implement identical arithmetic (same expressions, same operand
order) so they agree bit-for-bit on the mask kernels and to float rounding
on the resampler. ``benchmarks/bench_kernels.py`` compares their speed.

Conventions:
    - Pixel (row  i, col j) has its center at (x, y) = (j + 0.5, i + 0.5).
    - Resampling uses half-pixel centers without corner alignment: output
      index o maps to source coordinate (o + 0.5) * (in / out) - 0.5,
      clamped to [0, in - 1].
"""

from __future__ import annotations

import os

import numpy as np

_VALID_BACKENDS = ("numba", "numpy")
_requested = os.environ.get("SEGPAINT_BACKEND", "numba").strip().lower()
if _requested not in _VALID_BACKENDS:
    raise ValueError(
        f"SEGPAINT_BACKEND must be one of {_VALID_BACKENDS}, got {_requested!r}"
    )

_numba_available = False
if _requested == "numba":
    try:
        from numba import njit as _njit

        _numba_available = True
    except ImportError:
        _numba_available = False

#: Name of the backend actually in use ("numba" or "numpy").
BACKEND = "numba" if _numba_available else "numpy"


# ---------------------------------------------------------------------------
# Loop implementations (numba-compilable plain Python)
# ---------------------------------------------------------------------------

def _resize_bilinear_loop(src, out_h, out_w):
    in_h, in_w = src.shape
    out = np.empty((out_h, out_w), dtype=np.float64)
    sy = in_h / out_h
    sx = in_w / out_w
    for i in range(out_h):
        fy = (i + 0.5) * sy - 0.5
        if fy < 0.0:
            fy = 0.0
        if fy > in_h - 1.0:
            fy = in_h - 1.0
        y0 = int(np.floor(fy))
        y1 = y0 + 1 if y0 + 1 < in_h else in_h - 1
        wy = fy - y0
        for j in range(out_w):
            fx = (j + 0.5) * sx - 0.5
            if fx < 0.0:
                fx = 0.0
            if fx > in_w - 1.0:
                fx = in_w - 1.0
            x0 = int(np.floor(fx))
            x1 = x0 + 1 if x0 + 1 < in_w else in_w - 1
            wx = fx - x0
            out[i, j] = (1.0 - wy) * ((1.0 - wx) * src[y0, x0] + wx * src[y0, x1]) + wy * (
                (1.0 - wx) * src[y1, x0] + wx * src[y1, x1]
            )
    return out


def _fill_convex_polygon_loop(xs, ys, h, w):
    n = xs.shape[0]
    out = np.zeros((h, w), dtype=np.uint8)
    for i in range(h):
        py = i + 0.5
        for j in range(w):
            px = j + 0.5
            inside = True
            for k in range(n):
                k2 = (k + 1) % n
                ex = xs[k2] - xs[k]
                ey = ys[k2] - ys[k]
                cross = ex * (py - ys[k]) - ey * (px - xs[k])
                if cross < 0.0:
                    inside = False
                    break
            if inside:
                out[i, j] = 1
    return out


def _fill_ellipse_loop(cx, cy, rx, ry, angle, h, w):
    out = np.zeros((h, w), dtype=np.uint8)
    ca = np.cos(angle)
    sa = np.sin(angle)
    for i in range(h):
        dy = (i + 0.5) - cy
        for j in range(w):
            dx = (j + 0.5) - cx
            u = (dx * ca + dy * sa) / rx
            v = (-dx * sa + dy * ca) / ry
            if u * u + v * v <= 1.0:
                out[i, j] = 1
    return out


def _front_owner_loop(sils):
    k, h, w = sils.shape
    out = np.full((h, w), -1, dtype=np.int32)
    for i in range(h):
        for j in range(w):
            for layer in range(k):
                if sils[layer, i, j] != 0:
                    out[i, j] = layer
                    break
    return out


# ---------------------------------------------------------------------------
# Vectorized numpy implementations (fallback path)
# ---------------------------------------------------------------------------

def _resize_bilinear_numpy(src, out_h, out_w):
    in_h, in_w = src.shape
    fy = np.clip((np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5, 0.0, in_h - 1.0)
    fx = np.clip((np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5, 0.0, in_w - 1.0)
    y0 = np.floor(fy).astype(np.int64)
    x0 = np.floor(fx).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (fy - y0)[:, None]
    wx = (fx - x0)[None, :]
    v00 = src[y0[:, None], x0[None, :]]
    v01 = src[y0[:, None], x1[None, :]]
    v10 = src[y1[:, None], x0[None, :]]
    v11 = src[y1[:, None], x1[None, :]]
    return (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) + wy * ((1.0 - wx) * v10 + wx * v11)


def _fill_convex_polygon_numpy(xs, ys, h, w):
    py = np.arange(h)[:, None] + 0.5
    px = np.arange(w)[None, :] + 0.5
    inside = np.ones((h, w), dtype=bool)
    n = xs.shape[0]
    for k in range(n):
        k2 = (k + 1) % n
        ex = xs[k2] - xs[k]
        ey = ys[k2] - ys[k]
        cross = ex * (py - ys[k]) - ey * (px - xs[k])
        inside &= cross >= 0.0
    return inside.astype(np.uint8)


def _fill_ellipse_numpy(cx, cy, rx, ry, angle, h, w):
    dy = np.arange(h)[:, None] + 0.5 - cy
    dx = np.arange(w)[None, :] + 0.5 - cx
    ca = np.cos(angle)
    sa = np.sin(angle)
    u = (dx * ca + dy * sa) / rx
    v = (-dx * sa + dy * ca) / ry
    return (u * u + v * v <= 1.0).astype(np.uint8)


def _front_owner_numpy(sils):
    covered = sils.any(axis=0)
    first = sils.argmax(axis=0).astype(np.int32)
    return np.where(covered, first, np.int32(-1))


if _numba_available:
    _resize_bilinear_jit = _njit(cache=True)(_resize_bilinear_loop)
    _fill_convex_polygon_jit = _njit(cache=True)(_fill_convex_polygon_loop)
    _fill_ellipse_jit = _njit(cache=True)(_fill_ellipse_loop)
    _front_owner_jit = _njit(cache=True)(_front_owner_loop)


# ---------------------------------------------------------------------------
# Public dispatchers
# ---------------------------------------------------------------------------

def resize_bilinear(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resample a 2-D float64 array to (out_h, out_w) with bilinear weights.

    Uses half-pixel centers (no corner alignment) and clamps source
    coordinates to the array edge, so constant inputs stay constant and
    outputs never leave the convex hull of the input values.
    """
    if src.ndim != 2:
        raise ValueError(f"resize_bilinear expects a 2-D array, got shape {src.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got ({out_h}, {out_w})")
    src = np.ascontiguousarray(src, dtype=np.float64)
    if BACKEND == "numba":
        return _resize_bilinear_jit(src, out_h, out_w)
    return _resize_bilinear_numpy(src, out_h, out_w)


def fill_convex_polygon(xs: np.ndarray, ys: np.ndarray, h: int, w: int) -> np.ndarray:
    """Rasterize a convex polygon into a uint8 {0,1} mask of shape (h, w).

    Vertices must be ordered so interior points have nonnegative cross
    products against every directed edge (counter-clockwise in array
    coordinates, where y grows downward). Pixels whose center lies on an
    edge are included.
    """
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1 or xs.shape[0] < 3:
        raise ValueError("polygon needs matching 1-D xs/ys with at least 3 vertices")
    if BACKEND == "numba":
        return _fill_convex_polygon_jit(xs, ys, h, w)
    return _fill_convex_polygon_numpy(xs, ys, h, w)


def fill_ellipse(
    cx: float, cy: float, rx: float, ry: float, angle: float, h: int, w: int
) -> np.ndarray:
    """Rasterize a rotated ellipse into a uint8 {0,1} mask of shape (h, w)."""
    if rx <= 0 or ry <= 0:
        raise ValueError(f"ellipse radii must be positive, got ({rx}, {ry})")
    if BACKEND == "numba":
        return _fill_ellipse_jit(float(cx), float(cy), float(rx), float(ry), float(angle), h, w)
    return _fill_ellipse_numpy(cx, cy, rx, ry, angle, h, w)


def front_owner(sils: np.ndarray) -> np.ndarray:
    """Index of the front-most covering layer per pixel, -1 where uncovered.

    ``sils`` is a (K, H, W) uint8 stack ordered front to back (layer 0 wins).
    """
    if sils.ndim != 3:
        raise ValueError(f"front_owner expects a (K, H, W) stack, got shape {sils.shape}")
    sils = np.ascontiguousarray(sils, dtype=np.uint8)
    if sils.shape[0] == 0:
        return np.full(sils.shape[1:], -1, dtype=np.int32)
    if BACKEND == "numba":
        return _front_owner_jit(sils)
    return _front_owner_numpy(sils)
