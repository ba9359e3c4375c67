"""Evaluation: per-region segmentation IoU, painting distances, retrieval baseline.

Segmentation is scored three ways from a single predicted full-object
mask: against the full ground truth, against the hidden region (prediction
minus the input visible mask vs. the true hidden mask), and on the
non-hidden pixels only (does the model distort the visible input?).
Painting is scored by mean L1/L2 over the patch. The retrieval baseline
finds the training sample closest in frozen-backbone feature space and
answers with its occlusion-free appearance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import maskops
from .maskops import BBox, binarize, iou
from .netarch import NetConfig, SegPaintNet, compose_paint_input
from .scenegen import Sample
from .trainer import PreparedSample, TrainingExample, eval_example, prepare_base


@dataclass
class IoUReport:
    """Mean visible/invisible/union IoUs plus the per-object rows behind them.

    The invisible mean runs over occluded objects only: an unoccluded object
    has no hidden region to score, and including it would let the trivial
    copy-the-input baseline beat real models. ``count_occluded`` says how
    many objects contributed.
    """

    iou_union: float
    iou_visible: float
    iou_invisible: float
    records: list[dict]

    @property
    def count(self) -> int:
        return len(self.records)

    @property
    def count_occluded(self) -> int:
        return sum(1 for r in self.records if r["occluded"])

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "count_occluded": self.count_occluded,
            "iou_union": self.iou_union,
            "iou_visible": self.iou_visible,
            "iou_invisible": self.iou_invisible,
            "records": self.records,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))


@dataclass
class PaintReport:
    l1: float
    l2: float
    records: list[dict]

    @property
    def count(self) -> int:
        return len(self.records)

    def to_dict(self) -> dict:
        return {"count": self.count, "l1": self.l1, "l2": self.l2, "records": self.records}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))


def eval_segmentation(
    preds: list[np.ndarray],
    gts: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
    threshold: float = 0.5,
    sv_inputs: list[np.ndarray] | None = None,
    keys: list[str] | None = None,
) -> IoUReport:
    """Score predicted full-object masks against (sv, si, sf) ground truth.

    ``sv_inputs`` are the visible masks the model was conditioned on, which
    define what counts as predicted-hidden; they default to the ground-truth
    visible masks. All masks are binarized at ``threshold`` first.
    """
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    if sv_inputs is None:
        sv_inputs = [g[0] for g in gts]
    if len(sv_inputs) != len(preds):
        raise ValueError("sv_inputs length mismatch")
    records = []
    for i, (pred, (sv, si, sf)) in enumerate(zip(preds, gts)):
        for other in (sv, si, sf, sv_inputs[i]):
            if other.shape != pred.shape:
                raise ValueError(
                    f"object {i}: mask shape {other.shape} != prediction {pred.shape}"
                )
        pred_b = binarize(pred, threshold)
        sv_in = binarize(sv_inputs[i], threshold)
        si_b = binarize(si, threshold)
        pred_hidden = pred_b * (1.0 - sv_in)
        known = 1.0 - si_b  # pixels outside the true hidden region
        rec = {
            "key": keys[i] if keys else str(i),
            "occluded": bool(si_b.sum() > 0),
            "iou_union": iou(pred_b, sf, threshold),
            "iou_visible": iou(pred_b * known, binarize(sv, threshold) * known, threshold),
            "iou_invisible": iou(pred_hidden, si, threshold),
        }
        records.append(rec)
    n = max(len(records), 1)
    occluded = [r for r in records if r["occluded"]]
    return IoUReport(
        iou_union=sum(r["iou_union"] for r in records) / n,
        iou_visible=sum(r["iou_visible"] for r in records) / n,
        iou_invisible=(
            sum(r["iou_invisible"] for r in occluded) / len(occluded) if occluded else 1.0
        ),
        records=records,
    )


def eval_painting(pred_img: np.ndarray, gt_img: np.ndarray) -> tuple[float, float]:
    """Mean absolute and mean squared distance over all pixels and channels."""
    pred_img = np.asarray(pred_img, dtype=np.float64)
    gt_img = np.asarray(gt_img, dtype=np.float64)
    if pred_img.shape != gt_img.shape:
        raise ValueError(f"shape mismatch {pred_img.shape} vs {gt_img.shape}")
    diff = pred_img - gt_img
    return float(np.abs(diff).mean()), float((diff ** 2).mean())


# ---------------------------------------------------------------------------
# Model inference on samples
# ---------------------------------------------------------------------------

@dataclass
class Prediction:
    """Everything produced for one object: crop-frame and canvas-frame outputs."""

    example: TrainingExample
    pred_mask_low: np.ndarray     # (m, m) soft
    pred_mask_crop: np.ndarray    # (P, P) soft
    composed_input: np.ndarray    # (P, P, 3)
    painted: np.ndarray           # (P, P, 3) raw generator output
    painted_composite: np.ndarray  # visible pixels copied, rest generated
    pred_mask_canvas: np.ndarray  # (H, W) soft, original image frame


def predict(
    net: SegPaintNet,
    sample: Sample,
    expand_ratio: float = 0.2,
    base: PreparedSample | None = None,
) -> Prediction:
    """Run the full pipeline on one sample with a deterministic crop box."""
    cfg = net.cfg
    ex = eval_example(sample, cfg, expand_ratio, base)
    net.eval()
    with torch.no_grad():
        x = torch.from_numpy(ex.net_input.transpose(2, 0, 1)[None])
        boxes = np.array([ex.box.astuple()], dtype=np.int64)
        o, big = net.segmentor(x, boxes)
        img_p = torch.from_numpy(ex.image_patch.transpose(2, 0, 1)[None])
        vis_p = torch.from_numpy(ex.visible_patch[None, None])
        m_input = compose_paint_input(img_p, big, vis_p)
        painted = net.paint(m_input)
    pred_low = o[0, 0].numpy()
    pred_crop = big[0, 0].numpy()
    painted_np = painted[0].numpy().transpose(1, 2, 0)
    vis3 = ex.visible_patch[:, :, None]
    composite = ex.image_patch * vis3 + painted_np * (1.0 - vis3)
    canvas_h, canvas_w = sample.sv.shape
    in_frame = maskops.paste_mask(pred_crop, ex.box, (cfg.input_size, cfg.input_size))
    canvas = maskops.resize(in_frame, (canvas_h, canvas_w))
    return Prediction(
        example=ex,
        pred_mask_low=pred_low,
        pred_mask_crop=pred_crop,
        composed_input=m_input[0].numpy().transpose(1, 2, 0),
        painted=painted_np,
        painted_composite=composite.astype(np.float32),
        pred_mask_canvas=canvas,
    )


def crop_frame_gt(ex: TrainingExample, paint_size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(sv, si, sf) ground truth in the crop frame at painting resolution."""
    sv = ex.visible_patch
    sf = np.maximum(ex.sf_patch, sv)
    si = sf * (1.0 - sv)
    return sv, si, sf


# ---------------------------------------------------------------------------
# Nearest-neighbor retrieval baseline
# ---------------------------------------------------------------------------

class NNBaseline:
    """Retrieve the closest training sample in frozen-backbone feature space.

    Image and visible-mask features are extracted separately (mask channel
    zeroed and image channels zeroed, respectively), average-pooled and
    concatenated; retrieval minimizes L2 distance with lowest-index
    tie-breaking. The retrieved sample's occlusion-free appearance patch is
    the baseline's painting answer.
    """

    def __init__(self, net: SegPaintNet, train_samples: list[Sample],
                 expand_ratio: float = 0.2):
        if not train_samples:
            raise ValueError("nearest-neighbor baseline needs a nonempty train set")
        self.net = net
        self.expand_ratio = expand_ratio
        self.samples = train_samples
        self.bases = [prepare_base(s, net.cfg) for s in train_samples]
        self.features = np.stack([self._feature(b) for b in self.bases])

    def _feature(self, base: PreparedSample) -> np.ndarray:
        self.net.eval()
        backbone = self.net.segmentor.backbone
        img = base.image.transpose(2, 0, 1)[None]
        sv = base.sv[None, None]
        zeros_img = np.zeros_like(img)
        zeros_sv = np.zeros_like(sv)
        with torch.no_grad():
            x_img = torch.from_numpy(np.concatenate([img, zeros_sv], axis=1))
            x_msk = torch.from_numpy(np.concatenate([zeros_img, sv], axis=1))
            f_img = backbone.features(x_img).mean(dim=(2, 3))
            f_msk = backbone.features(x_msk).mean(dim=(2, 3))
        return np.concatenate([f_img[0].numpy(), f_msk[0].numpy()])

    def retrieve(self, query: Sample) -> tuple[int, Sample]:
        qf = self._feature(prepare_base(query, self.net.cfg))
        dists = np.linalg.norm(self.features - qf[None, :], axis=1)
        idx = int(np.argmin(dists))
        return idx, self.samples[idx]

    def paint(self, query: Sample) -> np.ndarray:
        """Painting answer for a query: the retrieved sample's target patch."""
        idx, retrieved = self.retrieve(query)
        ex = eval_example(retrieved, self.net.cfg, self.expand_ratio, self.bases[idx])
        return ex.paint_target


# ---------------------------------------------------------------------------
# Qualitative grid dumps
# ---------------------------------------------------------------------------

def _to_rgb_cell(arr: np.ndarray) -> np.ndarray:
    a = np.asarray(arr, dtype=np.float32)
    if a.ndim == 2:
        a = np.repeat(a[:, :, None], 3, axis=2)
    return (np.clip(a, 0.0, 1.0) * 255).astype(np.uint8)


def save_image_grid(path: str | Path, rows: list[list[np.ndarray]], pad: int = 2) -> None:
    """Write a grid of image/mask cells (one list per row) as a PNG."""
    if not rows or not rows[0]:
        raise ValueError("empty image grid")
    cells = [[_to_rgb_cell(c) for c in row] for row in rows]
    ch = max(c.shape[0] for row in cells for c in row)
    cw = max(c.shape[1] for row in cells for c in row)
    ncols = max(len(row) for row in cells)
    grid = np.full(
        (len(cells) * (ch + pad) - pad, ncols * (cw + pad) - pad, 3), 255, dtype=np.uint8
    )
    for r, row in enumerate(cells):
        for c, cell in enumerate(row):
            y = r * (ch + pad)
            x = c * (cw + pad)
            grid[y : y + cell.shape[0], x : x + cell.shape[1]] = cell
    Image.fromarray(grid).save(path)
