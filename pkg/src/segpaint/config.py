"""Run configuration: one YAML file drives every command.

A run config aggregates the dataset, network, training and evaluation
sections plus a global seed. Sections are optional in the file; the seed
cascades into dataset and training seeds unless those sections set their
own. The resolved configuration is written next to every command's outputs
so runs can be reproduced exactly.

Example file:

    seed: 7
    dataset:
      train_scenes: 20
      test_scenes: 8
      scene: {width: 128, height: 128, sprite_count: [3, 6]}
    net:
      preset: desk          # or "paper" for 500/58/256
      roi_grid: 8
    train:
      phase1_steps: 1000
      phase2_steps: 1000
    eval:
      threshold: 0.5
      occlusion_threshold: 0.05
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .netarch import NetConfig
from .scenegen import DatasetConfig, SceneConfig, _scene_config_from_dict, _scene_config_to_dict
from .trainer import TrainConfig


@dataclass(frozen=True)
class EvalConfig:
    threshold: float = 0.5
    occlusion_threshold: float = 0.05
    expand_ratio: float = 0.2
    grid_rows: int = 8

    def validate(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must be in (0,1), got {self.threshold}")
        if not 0.0 <= self.occlusion_threshold <= 1.0:
            raise ValueError(
                f"occlusion_threshold must be in [0,1], got {self.occlusion_threshold}"
            )

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "occlusion_threshold": self.occlusion_threshold,
            "expand_ratio": self.expand_ratio,
            "grid_rows": self.grid_rows,
        }


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    net: NetConfig = field(default_factory=NetConfig.desk)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        self.dataset.validate()
        self.net.validate()
        self.train.validate()
        self.eval.validate()

    def to_dict(self) -> dict:
        d = self.dataset
        return {
            "seed": self.seed,
            "dataset": {
                "scene": _scene_config_to_dict(d.scene),
                "train_scenes": d.train_scenes,
                "test_scenes": d.test_scenes,
                "seed": d.seed,
                "min_visible": d.min_visible,
                "train_seed_offset": d.train_seed_offset,
                "test_seed_offset": d.test_seed_offset,
            },
            "net": self.net.to_dict(),
            "train": self.train.to_dict(),
            "eval": self.eval.to_dict(),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))


def _dataset_from_dict(d: dict, default_seed: int) -> DatasetConfig:
    scene = _scene_config_from_dict({**_scene_config_to_dict(SceneConfig()), **d.get("scene", {})})
    return DatasetConfig(
        scene=scene,
        train_scenes=d.get("train_scenes", DatasetConfig.train_scenes),
        test_scenes=d.get("test_scenes", DatasetConfig.test_scenes),
        seed=d.get("seed", default_seed),
        min_visible=d.get("min_visible", DatasetConfig.min_visible),
        train_seed_offset=d.get("train_seed_offset", DatasetConfig.train_seed_offset),
        test_seed_offset=d.get("test_seed_offset", DatasetConfig.test_seed_offset),
    )


def _net_from_dict(d: dict) -> NetConfig:
    d = dict(d)
    preset = d.pop("preset", "desk")
    if preset == "desk":
        base = NetConfig.desk()
    elif preset == "paper":
        base = NetConfig()
    else:
        raise ValueError(f"unknown net preset {preset!r} (expected 'desk' or 'paper')")
    return replace(base, **d)


def run_config_from_dict(d: dict) -> RunConfig:
    seed = d.get("seed", 0)
    train_d = dict(d.get("train", {}))
    train_d.setdefault("seed", seed)
    cfg = RunConfig(
        seed=seed,
        dataset=_dataset_from_dict(d.get("dataset", {}), seed),
        net=_net_from_dict(d.get("net", {})),
        train=TrainConfig.from_dict(train_d),
        eval=EvalConfig(**d.get("eval", {})),
    )
    cfg.validate()
    return cfg


def load_run_config(path: str | Path | None) -> RunConfig:
    """Load a YAML run config; None gives the validated defaults."""
    if path is None:
        cfg = RunConfig()
        cfg.validate()
        return cfg
    p = Path(path)
    if not p.exists():
        raise ValueError(f"config file not found: {p}")
    doc = yaml.safe_load(p.read_text()) or {}
    if not isinstance(doc, dict):
        raise ValueError(f"config file {p} must contain a mapping")
    try:
        return run_config_from_dict(doc)
    except (TypeError, KeyError) as exc:
        raise ValueError(f"config file {p} is invalid: {exc}") from exc
