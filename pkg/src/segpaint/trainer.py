"""Two-phase training: mask and paint losses first, adversarial fine-tuning second.

Phase 1 jointly optimizes the segmentor and generator on the segmentation
loss plus the weighted L1 paint distance. Phase 2 alternates discriminator
updates with joint updates of the full objective over all parameters.
Checkpoints capture model, optimizer and RNG state so an interrupted run
resumed in single-worker mode is indistinguishable from an uninterrupted
one.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import losses, netarch
from .losses import LossWeights
from .maskops import BBox, binarize, crop_resize, expand_bbox, resize
from .netarch import NetConfig, SegPaintNet
from .scenegen import DatasetManifest, Sample, load_sample

logger = logging.getLogger(__name__)

METRICS_NAME = "metrics.jsonl"
FINAL_CHECKPOINT = "checkpoint_final.ckpt"


@dataclass(frozen=True)
class TrainConfig:
    phase1_steps: int = 1000
    phase2_steps: int = 1000
    batch_size: int = 8
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    lr_seg: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    device: str = "cpu"
    checkpoint_every: int = 0
    expand_range: tuple[float, float] = (0.10, 0.30)
    d_steps: int = 1
    saturating_gan: bool = False
    l1_masked: bool = False

    def validate(self) -> None:
        if self.phase1_steps < 0 or self.phase2_steps < 0:
            raise ValueError("step counts must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        lo, hi = self.expand_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError(f"expand_range must satisfy 0 <= lo <= hi <= 1, got {self.expand_range}")
        if self.d_steps < 0:
            raise ValueError("d_steps must be nonnegative")
        self.weights.validate()

    def to_dict(self) -> dict:
        return {
            "phase1_steps": self.phase1_steps,
            "phase2_steps": self.phase2_steps,
            "batch_size": self.batch_size,
            "lr_g": self.lr_g,
            "lr_d": self.lr_d,
            "lr_seg": self.lr_seg,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "weights": {
                "bg": self.weights.bg, "sv": self.weights.sv, "si": self.weights.si,
                "l1": self.weights.l1, "paint": self.weights.paint,
            },
            "seed": self.seed,
            "device": self.device,
            "checkpoint_every": self.checkpoint_every,
            "expand_range": list(self.expand_range),
            "d_steps": self.d_steps,
            "saturating_gan": self.saturating_gan,
            "l1_masked": self.l1_masked,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        if "expand_range" in d:
            d["expand_range"] = tuple(d["expand_range"])
        return cls(**d)


def config_hash(d: dict) -> str:
    return hashlib.sha256(
        json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Example preparation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PreparedSample:
    """Sample resized to the network input frame, reused across steps."""

    image: np.ndarray
    sv: np.ndarray
    sf: np.ndarray
    unoccluded: np.ndarray
    box: BBox


@dataclass(frozen=True)
class TrainingExample:
    """All tensors for one training instance, in numpy HWC layout."""

    net_input: np.ndarray       # (S, S, 4)
    box: BBox                   # expanded, input frame
    mask_target: np.ndarray     # (m, m) soft full-object mask
    sv_region: np.ndarray       # (m, m) hard
    si_region: np.ndarray       # (m, m) hard
    image_patch: np.ndarray     # (P, P, 3)
    visible_patch: np.ndarray   # (P, P) hard
    paint_target: np.ndarray    # (P, P, 3)
    sf_patch: np.ndarray        # (P, P) hard


def prepare_base(sample: Sample, net_cfg: NetConfig) -> PreparedSample:
    """Resize a sample to the input frame and scale its box accordingly."""
    s = net_cfg.input_size
    canvas_h, canvas_w = sample.sv.shape
    sx = s / canvas_w
    sy = s / canvas_h
    b = sample.bbox
    box = BBox(
        max(0, int(np.floor(b.x0 * sx))),
        max(0, int(np.floor(b.y0 * sy))),
        min(s, int(np.ceil(b.x1 * sx))),
        min(s, int(np.ceil(b.y1 * sy))),
    )
    box.validate((s, s))
    return PreparedSample(
        image=resize(sample.image, (s, s)),
        sv=resize(sample.sv, (s, s)),
        sf=resize(sample.sf, (s, s)),
        unoccluded=resize(sample.unoccluded, (s, s)),
        box=box,
    )


def training_example(
    sample: Sample,
    net_cfg: NetConfig,
    expand_range: tuple[float, float],
    rng: np.random.Generator,
    base: PreparedSample | None = None,
) -> TrainingExample:
    """Build one model-ready instance with a randomly expanded crop box."""
    if base is None:
        base = prepare_base(sample, net_cfg)
    s = net_cfg.input_size
    m = net_cfg.mask_size
    p = net_cfg.paint_size
    lo, hi = expand_range
    box = expand_bbox(base.box, lo, hi, rng, (s, s))

    mask_target = crop_resize(base.sf, box, (m, m))
    sv_region = binarize(crop_resize(base.sv, box, (m, m)))
    sf_region = np.maximum(binarize(mask_target), sv_region)
    si_region = sf_region * (1.0 - sv_region)

    visible_patch = binarize(crop_resize(base.sv, box, (p, p)))
    net_input = np.concatenate([base.image, base.sv[:, :, None]], axis=2)
    return TrainingExample(
        net_input=net_input,
        box=box,
        mask_target=mask_target,
        sv_region=sv_region,
        si_region=si_region,
        image_patch=crop_resize(base.image, box, (p, p)),
        visible_patch=visible_patch,
        paint_target=crop_resize(base.unoccluded, box, (p, p)),
        sf_patch=binarize(crop_resize(base.sf, box, (p, p))),
    )


def eval_example(
    sample: Sample,
    net_cfg: NetConfig,
    expand_ratio: float,
    base: PreparedSample | None = None,
) -> TrainingExample:
    """Deterministic instance for evaluation: both expansion bounds equal."""
    return training_example(
        sample, net_cfg, (expand_ratio, expand_ratio), np.random.default_rng(0), base
    )


@dataclass
class Batch:
    x: torch.Tensor            # (N, 4, S, S)
    boxes: np.ndarray          # (N, 4)
    mask_target: torch.Tensor  # (N, 1, m, m)
    sv_region: torch.Tensor
    si_region: torch.Tensor
    image_patch: torch.Tensor  # (N, 3, P, P)
    visible_patch: torch.Tensor  # (N, 1, P, P)
    paint_target: torch.Tensor
    sf_patch: torch.Tensor     # (N, 1, P, P)


def _to_batch(examples: list[TrainingExample], device: torch.device) -> Batch:
    def img(stack):
        return torch.from_numpy(np.stack(stack).transpose(0, 3, 1, 2)).to(device)

    def msk(stack):
        return torch.from_numpy(np.stack(stack)[:, None, :, :]).to(device)

    return Batch(
        x=img([e.net_input for e in examples]),
        boxes=np.array([e.box.astuple() for e in examples], dtype=np.int64),
        mask_target=msk([e.mask_target for e in examples]),
        sv_region=msk([e.sv_region for e in examples]),
        si_region=msk([e.si_region for e in examples]),
        image_patch=img([e.image_patch for e in examples]),
        visible_patch=msk([e.visible_patch for e in examples]),
        paint_target=img([e.paint_target for e in examples]),
        sf_patch=msk([e.sf_patch for e in examples]),
    )


def _draw_batch(
    bases: list[tuple[Sample, PreparedSample]],
    cfg: TrainConfig,
    net_cfg: NetConfig,
    rng: np.random.Generator,
    device: torch.device,
) -> Batch:
    idxs = rng.integers(0, len(bases), size=cfg.batch_size)
    examples = []
    for i in idxs:
        sample, base = bases[int(i)]
        try:
            examples.append(
                training_example(sample, net_cfg, cfg.expand_range, rng, base)
            )
        except ValueError as exc:
            logger.warning("skipping degenerate sample: %s", exc)
    if not examples:
        raise RuntimeError("no usable examples in drawn batch")
    return _to_batch(examples, device)


# ---------------------------------------------------------------------------
# Checkpointing (model + optimizers + RNG)
# ---------------------------------------------------------------------------

def _optim_arrays(name: str, opt: torch.optim.Optimizer) -> tuple[dict, dict]:
    sd = opt.state_dict()
    arrays: dict[str, np.ndarray] = {}
    scalars: dict[str, dict] = {}
    for pid, state in sd["state"].items():
        scalars[str(pid)] = {}
        for key, val in state.items():
            if isinstance(val, torch.Tensor):
                arrays[f"optim/{name}/{pid}/{key}"] = val.detach().cpu().numpy()
            else:
                scalars[str(pid)][key] = val
    meta = {"param_groups": sd["param_groups"], "scalars": scalars}
    return arrays, meta


def _restore_optim(
    name: str, opt: torch.optim.Optimizer, arrays: dict[str, np.ndarray], meta: dict
) -> None:
    state: dict[int, dict] = {}
    prefix = f"optim/{name}/"
    for key, arr in arrays.items():
        if not key.startswith(prefix):
            continue
        pid_s, field_name = key[len(prefix):].split("/", 1)
        state.setdefault(int(pid_s), {})[field_name] = torch.from_numpy(arr.copy())
    for pid_s, scalars in meta["scalars"].items():
        state.setdefault(int(pid_s), {}).update(scalars)
    opt.load_state_dict({"state": state, "param_groups": meta["param_groups"]})


def save_checkpoint(
    path: str | Path,
    net: SegPaintNet,
    optimizers: dict[str, torch.optim.Optimizer],
    step: int,
    data_rng: np.random.Generator,
    train_cfg: TrainConfig,
) -> None:
    """Write model, optimizer and RNG state; save -> load -> save is byte-stable."""
    extra_arrays: dict[str, np.ndarray] = {
        "rng/torch_cpu": torch.get_rng_state().numpy()
    }
    optim_meta: dict[str, dict] = {}
    for name, opt in optimizers.items():
        arrs, meta = _optim_arrays(name, opt)
        extra_arrays.update(arrs)
        optim_meta[name] = meta
    extra_meta = {
        "train_config": train_cfg.to_dict(),
        "train_config_hash": config_hash(train_cfg.to_dict()),
        "optim": optim_meta,
        "numpy_rng": data_rng.bit_generator.state,
    }
    netarch.save_net(path, net, step=step, extra_arrays=extra_arrays, extra_meta=extra_meta)


def load_checkpoint(path: str | Path) -> tuple[SegPaintNet, dict, dict[str, np.ndarray]]:
    """Read a training checkpoint; returns (net, meta, raw arrays)."""
    return netarch.load_net(path)


def _make_optimizers(net: SegPaintNet, cfg: TrainConfig) -> dict[str, torch.optim.Optimizer]:
    betas = (cfg.beta1, cfg.beta2)
    return {
        "seg": torch.optim.Adam(net.segmentor.parameters(), lr=cfg.lr_seg, betas=betas),
        "gen": torch.optim.Adam(net.generator.parameters(), lr=cfg.lr_g, betas=betas),
        "disc": torch.optim.Adam(net.discriminator.parameters(), lr=cfg.lr_d, betas=betas),
    }


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics_path: Path
    net: SegPaintNet
    steps_run: int


def _forward_losses(net: SegPaintNet, batch: Batch, cfg: TrainConfig):
    """Shared forward pass: segmentor, composition, generator, per-instance losses."""
    o, big = net.segmentor(batch.x, batch.boxes)
    m_input = netarch.compose_paint_input(batch.image_patch, big, batch.visible_patch)
    fake = net.paint(m_input)

    seg_totals = []
    seg_parts = np.zeros(3)
    for i in range(o.shape[0]):
        total_i, bd = losses.segm_loss(
            batch.mask_target[i], o[i], batch.sv_region[i], batch.si_region[i], cfg.weights
        )
        seg_totals.append(total_i)
        seg_parts += (bd.bg_bce, bd.sv_bce, bd.si_bce)
    seg_total = torch.stack(seg_totals).mean()
    seg_parts /= o.shape[0]

    l1_terms = []
    for i in range(fake.shape[0]):
        region = batch.sf_patch[i] if cfg.l1_masked else None
        l1_terms.append(losses.l1_paint(fake[i], batch.paint_target[i], region))
    l1 = torch.stack(l1_terms).mean()
    return o, m_input, fake, seg_total, seg_parts, l1


def train(
    cfg: TrainConfig,
    net_cfg: NetConfig,
    manifest: DatasetManifest,
    out_dir: str | Path,
    resume: str | Path | None = None,
) -> TrainResult:
    """Run the two-phase schedule over the manifest's train split.

    Deterministic for a fixed seed in single-process mode: sample order,
    box expansion and generator noise all derive from the seeded RNG states
    captured in checkpoints.
    """
    cfg.validate()
    net_cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    device = torch.device(cfg.device)

    indices = manifest.indices("train")
    if not indices:
        raise ValueError("manifest has no train samples")
    samples = [load_sample(manifest, i) for i in indices]
    bases = [(s, prepare_base(s, net_cfg)) for s in samples]

    total_steps = cfg.phase1_steps + cfg.phase2_steps
    if resume is not None:
        net, meta, arrays = load_checkpoint(resume)
        if meta.get("train_config_hash") != config_hash(cfg.to_dict()):
            raise ValueError("checkpoint/config mismatch: train config hash differs")
        if net.cfg != net_cfg:
            raise ValueError("checkpoint/config mismatch: net config differs")
        net.to(device)
        optimizers = _make_optimizers(net, cfg)
        for name, opt in optimizers.items():
            _restore_optim(name, opt, arrays, meta["optim"][name])
        torch.set_rng_state(torch.from_numpy(arrays["rng/torch_cpu"].copy()))
        data_rng = np.random.default_rng(0)
        data_rng.bit_generator.state = meta["numpy_rng"]
        start_step = int(meta["step"])
    else:
        net = netarch.init_params(net_cfg, cfg.seed).to(device)
        optimizers = _make_optimizers(net, cfg)
        data_rng = np.random.default_rng([cfg.seed, 0xDA7A])
        start_step = 0

    opt_seg, opt_g, opt_d = optimizers["seg"], optimizers["gen"], optimizers["disc"]
    metrics_path = out / METRICS_NAME
    net.train()
    t0 = time.time()

    with open(metrics_path, "a") as mf:
        for step in range(start_step, total_steps):
            phase = 1 if step < cfg.phase1_steps else 2
            batch = _draw_batch(bases, cfg, net_cfg, data_rng, device)
            o, m_input, fake, seg_total, seg_parts, l1 = _forward_losses(net, batch, cfg)

            gan_g_f = 0.0
            gan_d_f = 0.0
            if phase == 1:
                total = cfg.weights.paint * cfg.weights.l1 * l1 + seg_total
                if not torch.isfinite(total):
                    raise RuntimeError(f"non-finite loss at step {step}")
                opt_seg.zero_grad()
                opt_g.zero_grad()
                total.backward()
                opt_seg.step()
                opt_g.step()
            else:
                for _ in range(cfg.d_steps):
                    d_real = net.discriminator(m_input.detach(), batch.paint_target)
                    d_fake = net.discriminator(m_input.detach(), fake.detach())
                    _, gan_d = losses.gan_losses(d_real, d_fake, cfg.saturating_gan)
                    if not torch.isfinite(gan_d):
                        raise RuntimeError(f"non-finite discriminator loss at step {step}")
                    opt_d.zero_grad()
                    gan_d.backward()
                    opt_d.step()
                    gan_d_f = float(gan_d.detach())
                d_fake_joint = net.discriminator(m_input, fake)
                gan_g, _ = losses.gan_losses(d_fake_joint.detach(), d_fake_joint,
                                             cfg.saturating_gan)
                total = cfg.weights.paint * (gan_g + cfg.weights.l1 * l1) + seg_total
                if not torch.isfinite(total):
                    raise RuntimeError(f"non-finite loss at step {step}")
                opt_seg.zero_grad()
                opt_g.zero_grad()
                total.backward()
                opt_seg.step()
                opt_g.step()
                gan_g_f = float(gan_g.detach())

            record = {
                "step": step,
                "phase": phase,
                "bg_bce": float(seg_parts[0]),
                "sv_bce": float(seg_parts[1]),
                "si_bce": float(seg_parts[2]),
                "gan_g": gan_g_f,
                "gan_d": gan_d_f,
                "l1": float(l1.detach()),
                "total": float(total.detach()),
                "elapsed_s": round(time.time() - t0, 3),
            }
            mf.write(json.dumps(record) + "\n")
            if cfg.checkpoint_every > 0 and (step + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(
                    out / f"checkpoint_{step + 1:06d}.ckpt",
                    net, optimizers, step + 1, data_rng, cfg,
                )

    final = out / FINAL_CHECKPOINT
    save_checkpoint(final, net, optimizers, total_steps, data_rng, cfg)
    return TrainResult(final, metrics_path, net, total_steps - start_step)
