"""Mask and image algebra: set operations, IoU, generator-input composition,
bounding-box expansion, crop/resize.

All functions are pure and operate on numpy arrays:
    - binary masks: (H, W) float32 with values in [0, 1]; a "hard" mask
      holds only {0, 1}
    - RGB images: (H, W, 3) float32 with values in [0, 1]

Binarization uses the ``value >= threshold`` convention with a default
threshold of 0.5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

RED = np.array([1.0, 0.0, 0.0], dtype=np.float32)
BLUE = np.array([0.0, 0.0, 1.0], dtype=np.float32)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with half-open integer pixel bounds [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def astuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)

    def validate(self, bounds: tuple[int, int] | None = None) -> None:
        """Raise ValueError unless the box is non-degenerate (and within bounds)."""
        if self.x0 >= self.x1 or self.y0 >= self.y1:
            raise ValueError(f"degenerate box {self.astuple()}")
        if bounds is not None:
            w, h = bounds
            if self.x0 < 0 or self.y0 < 0 or self.x1 > w or self.y1 > h:
                raise ValueError(f"box {self.astuple()} outside bounds {w}x{h}")


def _require_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def _require_hard(m: np.ndarray, name: str) -> None:
    if not np.all((m == 0) | (m == 1)):
        raise ValueError(f"{name} is not a hard mask (values outside {{0, 1}})")


def binarize(m: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Threshold a soft mask into a hard {0, 1} float32 mask (>= convention)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    return (np.asarray(m) >= threshold).astype(np.float32)


def invisible_mask(sf: np.ndarray, sv: np.ndarray) -> np.ndarray:
    """Hidden-region mask: pixels of the full mask not in the visible mask.

    Both masks must be hard and the visible mask must be a pixelwise subset
    of the full mask.
    """
    sf = np.asarray(sf)
    sv = np.asarray(sv)
    _require_same_shape(sf, sv, "invisible_mask")
    _require_hard(sf, "full mask")
    _require_hard(sv, "visible mask")
    violations = int(np.count_nonzero((sv == 1) & (sf == 0)))
    if violations:
        raise ValueError(
            f"visible mask is not a subset of the full mask ({violations} pixels outside)"
        )
    return ((sf == 1) & (sv == 0)).astype(np.float32)


def iou(a: np.ndarray, b: np.ndarray, threshold: float = 0.5) -> float:
    """Intersection over union of two masks after binarizing at ``threshold``.

    Two empty masks agree perfectly and score 1.0; empty vs nonempty is 0.0.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    _require_same_shape(a, b, "iou")
    ah = a >= threshold
    bh = b >= threshold
    union = int(np.count_nonzero(ah | bh))
    if union == 0:
        return 1.0
    inter = int(np.count_nonzero(ah & bh))
    return inter / union


def compose_generator_input(
    image: np.ndarray, full_mask: np.ndarray, visible_mask: np.ndarray
) -> np.ndarray:
    """Build the painter's conditioning image from an image and two masks.

    Pixels in the visible mask copy the image, pixels claimed by the full
    mask but not visible become pure red, everything else pure blue. The
    three regions are exclusive by construction, so the output is well
    defined even when the full mask does not contain the visible one.
    """
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"image must be (H, W, 3), got {image.shape}")
    o = np.asarray(full_mask) >= 0.5
    v = np.asarray(visible_mask) >= 0.5
    if o.shape != image.shape[:2] or v.shape != image.shape[:2]:
        raise ValueError(
            f"mask shapes {o.shape}/{v.shape} do not match image {image.shape[:2]}"
        )
    out = np.empty_like(image)
    out[:, :] = BLUE
    out[o & ~v] = RED
    out[v] = image[v]
    return out


def expand_bbox(
    box: BBox,
    lo: float,
    hi: float,
    rng: np.random.Generator,
    bounds: tuple[int, int],
) -> BBox:
    """Push each box side outward by an independent uniform ratio of its side
    length drawn from [lo, hi], then clip to the image bounds.

    Draw order is fixed (left, right, top, bottom) so results are
    reproducible for a given generator state. Fractional expansions round
    outward, hence the result always contains the input box.
    """
    if not 0.0 <= lo <= hi:
        raise ValueError(f"need 0 <= lo <= hi, got lo={lo}, hi={hi}")
    box.validate(bounds)
    w_img, h_img = bounds
    bw = box.width
    bh = box.height
    u_left, u_right, u_top, u_bottom = (float(rng.uniform(lo, hi)) for _ in range(4))
    x0 = max(0, math.floor(box.x0 - u_left * bw))
    x1 = min(w_img, math.ceil(box.x1 + u_right * bw))
    y0 = max(0, math.floor(box.y0 - u_top * bh))
    y1 = min(h_img, math.ceil(box.y1 + u_bottom * bh))
    return BBox(x0, y0, x1, y1)


def crop_resize(x: np.ndarray, box: BBox, size: tuple[int, int]) -> np.ndarray:
    """Crop ``box`` out of a mask or image and bilinearly resample to ``size``.

    ``size`` is (height, width). Output values are clipped to [0, 1] so soft
    masks stay valid; dtype is float32.
    """
    x = np.asarray(x)
    if x.ndim not in (2, 3):
        raise ValueError(f"expected (H, W) or (H, W, C) array, got shape {x.shape}")
    box.validate((x.shape[1], x.shape[0]))
    out_h, out_w = size
    crop = x[box.y0 : box.y1, box.x0 : box.x1]
    if crop.size == 0:
        raise ValueError(f"empty crop for box {box.astuple()}")
    if x.ndim == 2:
        out = kernels.resize_bilinear(crop.astype(np.float64), out_h, out_w)
        return np.clip(out, 0.0, 1.0).astype(np.float32)
    chans = [
        kernels.resize_bilinear(crop[:, :, c].astype(np.float64), out_h, out_w)
        for c in range(crop.shape[2])
    ]
    return np.clip(np.stack(chans, axis=2), 0.0, 1.0).astype(np.float32)


def resize(x: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinearly resample a full mask or image to ``size`` (height, width)."""
    x = np.asarray(x)
    return crop_resize(x, BBox(0, 0, x.shape[1], x.shape[0]), size)


def paste_mask(mask: np.ndarray, box: BBox, canvas_hw: tuple[int, int]) -> np.ndarray:
    """Resample a crop-frame mask back into ``box`` on an empty full-frame canvas.

    Inverse of ``crop_resize`` for masks, used to lift crop-space predictions
    into the common image frame.
    """
    h, w = canvas_hw
    box.validate((w, h))
    patch = kernels.resize_bilinear(
        np.asarray(mask, dtype=np.float64), box.height, box.width
    )
    out = np.zeros((h, w), dtype=np.float32)
    out[box.y0 : box.y1, box.x0 : box.x1] = np.clip(patch, 0.0, 1.0)
    return out
