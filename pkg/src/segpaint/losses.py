"""Loss stack for joint mask prediction and adversarial painting.

Region-restricted binary cross entropy, the weighted three-region
segmentation loss, the adversarial pair losses, masked/unmasked L1, and
the combined objective. All functions are pure, keep the autograd graph
of their tensor inputs, and work in whatever float dtype they are given
(tests run them in float64).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch

#: Clamp applied to sigmoid outputs before logs.
EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the combined objective.

    ``paint`` scales the whole painting objective (adversarial term plus
    ``l1`` times the reconstruction distance); ``bg``/``sv``/``si`` weight
    the three segmentation regions.
    """

    bg: float = 1.0
    sv: float = 5.0
    si: float = 3.0
    l1: float = 100.0
    paint: float = 0.1

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if v < 0:
                raise ValueError(f"loss weight {f.name} must be nonnegative, got {v}")


@dataclass
class LossBreakdown:
    """Unweighted loss terms of one instance or batch.

    ``total`` is recomputable from the parts and a ``LossWeights``;
    ``gan_d`` is the discriminator's own objective and never enters it.
    """

    bg_bce: float = 0.0
    sv_bce: float = 0.0
    si_bce: float = 0.0
    gan_g: float = 0.0
    gan_d: float = 0.0
    l1: float = 0.0
    total: float = 0.0

    def to_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _as_float(v: torch.Tensor | float) -> float:
    if isinstance(v, torch.Tensor):
        return float(v.detach())
    return float(v)


def bce_region(g: torch.Tensor, o: torch.Tensor, region: torch.Tensor) -> torch.Tensor:
    """Binary cross entropy between target ``g`` and prediction ``o`` averaged
    over the pixels selected by the hard mask ``region``.

    The target may be soft. An empty region contributes zero loss (an
    unoccluded object simply has no hidden pixels to penalize).
    """
    _check_same_shape(g, o, "bce_region")
    _check_same_shape(region, o, "bce_region (region)")
    n = region.sum()
    if n.item() == 0:
        return o.sum() * 0.0
    oc = o.clamp(EPS, 1.0 - EPS)
    pointwise = g * torch.log(oc) + (1.0 - g) * torch.log(1.0 - oc)
    return -(pointwise * region).sum() / n


def segm_loss(
    g: torch.Tensor,
    o: torch.Tensor,
    sv: torch.Tensor,
    si: torch.Tensor,
    weights: LossWeights,
) -> tuple[torch.Tensor, LossBreakdown]:
    """Weighted sum of per-region cross entropies against the full-object target.

    ``sv`` and ``si`` are disjoint hard region masks; the remainder of the
    patch is the background region. Each region is normalized by its own
    pixel count.
    """
    _check_same_shape(sv, o, "segm_loss (sv)")
    _check_same_shape(si, o, "segm_loss (si)")
    if bool(((sv > 0) & (si > 0)).any()):
        raise ValueError("visible and invisible regions overlap")
    bg = 1.0 - sv - si
    bg_bce = bce_region(g, o, bg)
    sv_bce = bce_region(g, o, sv)
    si_bce = bce_region(g, o, si)
    total = weights.bg * bg_bce + weights.sv * sv_bce + weights.si * si_bce
    breakdown = LossBreakdown(
        bg_bce=_as_float(bg_bce), sv_bce=_as_float(sv_bce), si_bce=_as_float(si_bce),
        total=_as_float(total),
    )
    return total, breakdown


def gan_losses(
    d_real: torch.Tensor, d_fake: torch.Tensor, saturating: bool = False
) -> tuple[torch.Tensor, torch.Tensor]:
    """Generator and discriminator objectives from realness score grids.

    Returns ``(gan_g, gan_d)``. The generator term defaults to the
    non-saturating form -log D(fake); pass ``saturating=True`` for the
    log(1 - D(fake)) variant.
    """
    real = d_real.clamp(EPS, 1.0 - EPS)
    fake = d_fake.clamp(EPS, 1.0 - EPS)
    gan_d = -torch.log(real).mean() - torch.log(1.0 - fake).mean()
    if saturating:
        gan_g = torch.log(1.0 - fake).mean()
    else:
        gan_g = -torch.log(fake).mean()
    return gan_g, gan_d


def l1_paint(
    pred: torch.Tensor, gt: torch.Tensor, region: torch.Tensor | None = None
) -> torch.Tensor:
    """Mean absolute difference over the whole patch, or over ``region`` if given.

    A 2-D region mask broadcasts across the channel dimension.
    """
    _check_same_shape(pred, gt, "l1_paint")
    diff = (pred - gt).abs()
    if region is None:
        return diff.mean()
    r = region
    while r.dim() < diff.dim():
        r = r.unsqueeze(0)
    r = r.expand_as(diff)
    n = r.sum()
    if n.item() == 0:
        return pred.sum() * 0.0
    return (diff * r).sum() / n


def full_loss(
    bg_bce: torch.Tensor | float,
    sv_bce: torch.Tensor | float,
    si_bce: torch.Tensor | float,
    gan_g: torch.Tensor | float,
    l1: torch.Tensor | float,
    weights: LossWeights,
    gan_d: float = 0.0,
) -> tuple[torch.Tensor | float, LossBreakdown]:
    """Combined objective: paint * (gan_g + l1_weight * l1) + weighted segmentation.

    ``gan_d`` is carried into the breakdown for logging only.
    """
    total = (
        weights.paint * (gan_g + weights.l1 * l1)
        + weights.bg * bg_bce
        + weights.sv * sv_bce
        + weights.si * si_bce
    )
    breakdown = LossBreakdown(
        bg_bce=_as_float(bg_bce), sv_bce=_as_float(sv_bce), si_bce=_as_float(si_bce),
        gan_g=_as_float(gan_g), gan_d=_as_float(gan_d), l1=_as_float(l1),
        total=_as_float(total),
    )
    return total, breakdown
