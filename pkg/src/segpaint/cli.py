"""Command-line surface: dataset generation, training, evaluation, inference.

One binary with subcommands. A YAML config file is the source of truth and
flags override it; every command writes its resolved configuration under
the output directory. Environment variables mirror flags with the
``SEGPAINT_`` prefix (e.g. ``SEGPAINT_TRAIN_SEED=3 segpaint train ...``).
Commands exit 0 on success and nonzero with a one-line diagnostic on
failure.
"""

from __future__ import annotations

import functools
from collections import defaultdict
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import depthlayer, evalsuite, scenegen, trainer
from .config import RunConfig, load_run_config
from .maskops import BBox, binarize
from .scenegen import Sample, load_manifest, load_sample


def _friendly_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except (ValueError, RuntimeError, OSError) as exc:
            raise click.ClickException(str(exc))

    return wrapper


def _prepare_out(out: str, no_clobber: bool, *expected: str) -> Path:
    out_dir = Path(out)
    if no_clobber:
        for name in expected:
            target = out_dir / name
            if target.exists():
                raise click.ClickException(f"refusing to overwrite {target} (--no-clobber)")
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _resolve_config(config: str | None, seed: int | None) -> RunConfig:
    cfg = load_run_config(config)
    if seed is not None:
        from dataclasses import replace

        cfg = replace(
            cfg,
            seed=seed,
            dataset=replace(cfg.dataset, seed=seed),
            train=replace(cfg.train, seed=seed),
        )
        cfg.validate()
    return cfg


def _load_net(checkpoint: str):
    net, meta, _ = trainer.load_checkpoint(checkpoint)
    net.eval()
    return net


def _split_samples(manifest, split: str) -> tuple[list[int], list[Sample]]:
    indices = manifest.indices(split)
    if not indices:
        raise click.ClickException(f"manifest has no samples in split {split!r}")
    return indices, [load_sample(manifest, i) for i in indices]


@click.group(context_settings={"auto_envvar_prefix": "SEGPAINT"})
def main() -> None:
    """Segment and paint the hidden parts of occluded objects."""


@main.command("gen-data")
@click.option("--config", type=click.Path(exists=True), default=None, help="Run config YAML.")
@click.option("--out", required=True, type=click.Path(), help="Dataset output directory.")
@click.option("--seed", type=int, default=None, help="Override the global seed.")
@click.option("--no-clobber", is_flag=True, help="Fail instead of overwriting outputs.")
@_friendly_errors
def cmd_gen_data(config, out, seed, no_clobber):
    """Generate a layered-scene dataset with exact occlusion masks."""
    cfg = _resolve_config(config, seed)
    out_dir = _prepare_out(out, no_clobber, scenegen.MANIFEST_NAME, "run_config.yaml")
    manifest = scenegen.build_dataset(cfg.dataset, out_dir)
    cfg.save(out_dir / "run_config.yaml")
    n_train = len(manifest.indices("train"))
    n_test = len(manifest.indices("test"))
    click.echo(
        f"wrote {len(manifest.samples)} samples "
        f"({n_train} train / {n_test} test) to {out_dir}"
    )


@main.command("train")
@click.option("--config", type=click.Path(exists=True), default=None, help="Run config YAML.")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True),
              help="Dataset directory or manifest.json.")
@click.option("--out", required=True, type=click.Path(), help="Run output directory.")
@click.option("--seed", type=int, default=None, help="Override the global seed.")
@click.option("--device", type=str, default=None, help="Torch device (default cpu).")
@click.option("--resume", type=click.Path(exists=True), default=None,
              help="Checkpoint to continue from.")
@click.option("--no-clobber", is_flag=True, help="Fail instead of overwriting outputs.")
@_friendly_errors
def cmd_train(config, manifest_path, out, seed, device, resume, no_clobber):
    """Run the two-phase training schedule."""
    cfg = _resolve_config(config, seed)
    if device is not None:
        from dataclasses import replace

        cfg = replace(cfg, train=replace(cfg.train, device=device))
    out_dir = _prepare_out(out, no_clobber, trainer.FINAL_CHECKPOINT, "run_config.yaml")
    manifest = load_manifest(manifest_path)
    cfg.save(out_dir / "run_config.yaml")
    result = trainer.train(cfg.train, cfg.net, manifest, out_dir, resume=resume)
    click.echo(f"trained {result.steps_run} steps; checkpoint at {result.checkpoint_path}")


@main.command("eval-seg")
@click.option("--config", type=click.Path(exists=True), default=None, help="Run config YAML.")
@click.option("--checkpoint", type=click.Path(exists=True), default=None,
              help="Trained checkpoint (omit with --oracle).")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--threshold", type=float, default=None, help="Mask binarization threshold.")
@click.option("--oracle", is_flag=True, help="Score ground-truth masks as predictions.")
@click.option("--split", type=str, default="test", show_default=True)
@click.option("--no-clobber", is_flag=True, help="Fail instead of overwriting outputs.")
@_friendly_errors
def cmd_eval_seg(config, checkpoint, manifest_path, out, threshold, oracle, split, no_clobber):
    """Report visible / invisible / union IoU over a dataset split."""
    cfg = _resolve_config(config, None)
    thr = threshold if threshold is not None else cfg.eval.threshold
    out_dir = _prepare_out(out, no_clobber, "seg_report.json", "run_config.yaml")
    manifest = load_manifest(manifest_path)
    indices, samples = _split_samples(manifest, split)

    if oracle:
        net_cfg = cfg.net
        examples = [trainer.eval_example(s, net_cfg, cfg.eval.expand_ratio) for s in samples]
        preds = [np.maximum(e.sf_patch, e.visible_patch) for e in examples]
        gts = [evalsuite.crop_frame_gt(e, net_cfg.paint_size) for e in examples]
        sv_inputs = [e.visible_patch for e in examples]
    else:
        if checkpoint is None:
            raise click.ClickException("--checkpoint is required unless --oracle is set")
        net = _load_net(checkpoint)
        predictions = [evalsuite.predict(net, s, cfg.eval.expand_ratio) for s in samples]
        preds = [p.pred_mask_crop for p in predictions]
        gts = [evalsuite.crop_frame_gt(p.example, net.cfg.paint_size) for p in predictions]
        sv_inputs = [p.example.visible_patch for p in predictions]

    keys = [manifest.samples[i].sample_key for i in indices]
    report = evalsuite.eval_segmentation(preds, gts, thr, sv_inputs, keys)
    report.save(out_dir / "seg_report.json")
    cfg.save(out_dir / "run_config.yaml")
    click.echo(
        f"{split}: union {report.iou_union:.4f}  visible {report.iou_visible:.4f}  "
        f"invisible {report.iou_invisible:.4f}  "
        f"over {report.count} objects ({report.count_occluded} occluded)"
    )


@main.command("eval-paint")
@click.option("--config", type=click.Path(exists=True), default=None, help="Run config YAML.")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--split", type=str, default="test", show_default=True)
@click.option("--no-clobber", is_flag=True, help="Fail instead of overwriting outputs.")
@_friendly_errors
def cmd_eval_paint(config, checkpoint, manifest_path, out, split, no_clobber):
    """Report painting L1/L2 and dump qualitative grids."""
    cfg = _resolve_config(config, None)
    out_dir = _prepare_out(out, no_clobber, "paint_report.json", "run_config.yaml")
    manifest = load_manifest(manifest_path)
    indices, samples = _split_samples(manifest, split)
    net = _load_net(checkpoint)

    records = []
    l1_sum = l2_sum = 0.0
    grid_rows = []
    for idx, sample in zip(indices, samples):
        p = evalsuite.predict(net, sample, cfg.eval.expand_ratio)
        l1, l2 = evalsuite.eval_painting(p.painted, p.example.paint_target)
        l1_sum += l1
        l2_sum += l2
        records.append({"key": manifest.samples[idx].sample_key, "l1": l1, "l2": l2})
        if len(grid_rows) < cfg.eval.grid_rows:
            grid_rows.append([p.composed_input, p.example.paint_target, p.painted])
    n = len(records)
    report = evalsuite.PaintReport(l1=l1_sum / n, l2=l2_sum / n, records=records)
    report.save(out_dir / "paint_report.json")
    if grid_rows:
        evalsuite.save_image_grid(out_dir / "paint_grid.png", grid_rows)
    cfg.save(out_dir / "run_config.yaml")
    click.echo(f"{split}: L1 {report.l1:.4f}  L2 {report.l2:.4f}  over {n} objects")


@main.command("depth-order")
@click.option("--config", type=click.Path(exists=True), default=None, help="Run config YAML.")
@click.option("--checkpoint", type=click.Path(exists=True), default=None,
              help="Trained checkpoint (omit with --oracle).")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--threshold", type=float, default=None,
              help="Occlusion-pair IoU threshold (default 0.05).")
@click.option("--oracle", is_flag=True, help="Use ground-truth masks as predictions.")
@click.option("--split", type=str, default="test", show_default=True)
@click.option("--no-clobber", is_flag=True, help="Fail instead of overwriting outputs.")
@_friendly_errors
def cmd_depth_order(config, checkpoint, manifest_path, out, threshold, oracle, split, no_clobber):
    """Infer occluder/occludee graphs per scene and score against ground truth."""
    cfg = _resolve_config(config, None)
    thr = threshold if threshold is not None else cfg.eval.occlusion_threshold
    out_dir = _prepare_out(out, no_clobber, "occlusion_graphs.json", "run_config.yaml")
    manifest = load_manifest(manifest_path)
    indices, samples = _split_samples(manifest, split)

    net = None
    if not oracle:
        if checkpoint is None:
            raise click.ClickException("--checkpoint is required unless --oracle is set")
        net = _load_net(checkpoint)

    by_scene: dict[str, list[Sample]] = defaultdict(list)
    for idx, sample in zip(indices, samples):
        by_scene[manifest.samples[idx].scene_key].append(sample)

    graphs = {}
    gt = {}
    layers = {}
    for scene_key, scene_samples in sorted(by_scene.items()):
        ids = [s.object_id for s in scene_samples]
        if oracle:
            objects = [(s.sv, s.sf) for s in scene_samples]
        else:
            objects = [
                (s.sv, evalsuite.predict(net, s, cfg.eval.expand_ratio).pred_mask_canvas)
                for s in scene_samples
            ]
        graph = depthlayer.infer_occlusions(objects, thr, ids=ids)
        graphs[scene_key] = graph
        gt[scene_key] = depthlayer.gt_pairs(scene_samples, thr, ids=ids)
        layers[scene_key] = depthlayer.layer_order(graph).layers
    accuracy = depthlayer.depth_accuracy(graphs, gt)
    depthlayer.save_graphs(out_dir / "occlusion_graphs.json", graphs, accuracy)
    (out_dir / "layers.json").write_text(
        __import__("json").dumps(layers, indent=1, sort_keys=True)
    )
    cfg.save(out_dir / "run_config.yaml")
    click.echo(f"{split}: depth accuracy {accuracy:.4f} over {len(graphs)} scenes")


@main.command("infer")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.argument("image_path", type=click.Path(exists=True))
@click.argument("sv_path", type=click.Path(exists=True))
@click.option("--config", type=click.Path(exists=True), default=None, help="Run config YAML.")
@click.option("--out", required=True, type=click.Path())
@click.option("--no-clobber", is_flag=True, help="Fail instead of overwriting outputs.")
@_friendly_errors
def cmd_infer(checkpoint, image_path, sv_path, config, out, no_clobber):
    """Paint the hidden region of one object given an image and its visible mask."""
    cfg = _resolve_config(config, None)
    out_dir = _prepare_out(out, no_clobber, "painted.png", "pred_sf.png")
    with Image.open(image_path) as im:
        image = np.asarray(im.convert("RGB")).astype(np.float32) / 255.0
    with Image.open(sv_path) as im:
        sv = (np.asarray(im.convert("L")) > 127).astype(np.float32)
    if sv.shape != image.shape[:2]:
        raise click.ClickException(
            f"visible mask {sv.shape} does not match image {image.shape[:2]}"
        )
    ys, xs = np.nonzero(sv)
    if len(xs) == 0:
        raise click.ClickException("visible mask is empty")
    bbox = BBox(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
    # no ground truth at inference: the full mask and paint target are unknown
    sample = Sample(
        object_id=0, image=image, sv=sv, si=np.zeros_like(sv), sf=sv,
        bbox=bbox, occluders=(), unoccluded=image,
    )
    net = _load_net(checkpoint)
    p = evalsuite.predict(net, sample, cfg.eval.expand_ratio)
    Image.fromarray((np.clip(p.painted_composite, 0, 1) * 255).astype(np.uint8)).save(
        out_dir / "painted.png"
    )
    Image.fromarray((np.clip(p.painted, 0, 1) * 255).astype(np.uint8)).save(
        out_dir / "generated.png"
    )
    mask_canvas = (binarize(p.pred_mask_canvas) * 255).astype(np.uint8)
    Image.fromarray(mask_canvas).save(out_dir / "pred_sf.png")
    cfg.save(out_dir / "run_config.yaml")
    click.echo(f"wrote painted.png, generated.png, pred_sf.png to {out_dir}")


if __name__ == "__main__":
    main()
