"""Procedurally generated layered 2-D scenes with exact occlusion ground truth.

A scene is an ordered stack of opaque textured sprites over a textured
background. Because depth order is known, every object's full silhouette,
visible region and hidden region can be derived exactly: render the object
alone, compare with the composite render, and the pixels that agree inside
the object's silhouette are visible. Sprite colors are drawn without
replacement per scene so the pixel-equality test can never confuse two
objects.

Datasets persist as 8-bit PNG files (masks single-channel 0/255) plus a
JSON manifest; regeneration from the recorded seeds is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import kernels
from .maskops import BBox

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"

SHAPE_KINDS = ("rectangle", "ellipse", "polygon")
TEXTURE_KINDS = ("solid", "stripes", "checker")

_PLACEMENT_TRIES = 64


@dataclass(frozen=True)
class Texture:
    """Deterministic color pattern evaluated in canvas coordinates.

    Colors are 8-bit RGB triples; two-color patterns alternate between
    ``color_a`` and ``color_b`` with cell size ``period`` pixels.
    """

    kind: str
    color_a: tuple[int, int, int]
    color_b: tuple[int, int, int] | None = None
    period: float = 8.0
    angle: float = 0.0

    def render(self, h: int, w: int) -> np.ndarray:
        """Fill an (h, w, 3) uint8 canvas with this pattern."""
        ca = np.asarray(self.color_a, dtype=np.uint8)
        if self.kind == "solid":
            return np.broadcast_to(ca, (h, w, 3)).copy()
        cb = np.asarray(self.color_b, dtype=np.uint8)
        ys = np.arange(h)[:, None] + 0.5
        xs = np.arange(w)[None, :] + 0.5
        if self.kind == "stripes":
            t = np.floor((xs * np.cos(self.angle) + ys * np.sin(self.angle)) / self.period)
            parity = (t.astype(np.int64) % 2).astype(bool)
        elif self.kind == "checker":
            t = np.floor(xs / self.period) + np.floor(ys / self.period)
            parity = (t.astype(np.int64) % 2).astype(bool)
        else:
            raise ValueError(f"unknown texture kind {self.kind!r}")
        out = np.where(parity[:, :, None], cb, ca)
        return out.astype(np.uint8)

    def colors(self) -> tuple[tuple[int, int, int], ...]:
        if self.color_b is None:
            return (self.color_a,)
        return (self.color_a, self.color_b)


def _oriented(xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Order polygon vertices so the rasterizer's cross-product test fills them."""
    area2 = float(np.sum(xs * np.roll(ys, -1) - np.roll(xs, -1) * ys))
    if area2 < 0:
        return xs[::-1].copy(), ys[::-1].copy()
    return xs, ys


@dataclass(frozen=True)
class Sprite:
    """Opaque textured shape with a pose and a unique depth rank (0 = frontmost)."""

    kind: str
    cx: float
    cy: float
    rx: float
    ry: float
    angle: float
    texture: Texture
    depth_rank: int
    unit_verts: tuple[tuple[float, float], ...] = ()

    def silhouette(self, h: int, w: int) -> np.ndarray:
        """Rasterize the full shape (ignoring occlusion) into a uint8 {0,1} mask."""
        if self.kind == "ellipse":
            return kernels.fill_ellipse(self.cx, self.cy, self.rx, self.ry, self.angle, h, w)
        if self.kind == "rectangle":
            unit = np.array([(-1, -1), (1, -1), (1, 1), (-1, 1)], dtype=np.float64)
        elif self.kind == "polygon":
            if len(self.unit_verts) < 3:
                raise ValueError("polygon sprite needs at least 3 unit vertices")
            unit = np.asarray(self.unit_verts, dtype=np.float64)
        else:
            raise ValueError(f"unknown sprite kind {self.kind!r}")
        ca, sa = np.cos(self.angle), np.sin(self.angle)
        ux = unit[:, 0] * self.rx
        uy = unit[:, 1] * self.ry
        xs = self.cx + ux * ca - uy * sa
        ys = self.cy + ux * sa + uy * ca
        xs, ys = _oriented(xs, ys)
        return kernels.fill_convex_polygon(xs, ys, h, w)


@dataclass
class LayeredScene:
    """Background plus sprites composited by depth rank (painter's algorithm)."""

    width: int
    height: int
    background: Texture
    sprites: list[Sprite]

    def __post_init__(self) -> None:
        ranks = [s.depth_rank for s in self.sprites]
        if len(set(ranks)) != len(ranks):
            raise ValueError(f"depth ranks must be unique, got {ranks}")

    def silhouettes(self) -> np.ndarray:
        """(K, H, W) uint8 stack of full silhouettes in sprite-list order."""
        if not self.sprites:
            return np.zeros((0, self.height, self.width), dtype=np.uint8)
        return np.stack([s.silhouette(self.height, self.width) for s in self.sprites])

    def render(self, sils: np.ndarray | None = None) -> np.ndarray:
        """Composite render as (H, W, 3) uint8, frontmost rank drawn last."""
        if sils is None:
            sils = self.silhouettes()
        img = self.background.render(self.height, self.width)
        for idx in sorted(range(len(self.sprites)), key=lambda i: -self.sprites[i].depth_rank):
            tex = self.sprites[idx].texture.render(self.height, self.width)
            on = sils[idx] == 1
            img[on] = tex[on]
        return img

    def render_alone(self, index: int, sil: np.ndarray | None = None) -> np.ndarray:
        """Render with every sprite except ``index`` removed."""
        sprite = self.sprites[index]
        if sil is None:
            sil = sprite.silhouette(self.height, self.width)
        img = self.background.render(self.height, self.width)
        tex = sprite.texture.render(self.height, self.width)
        on = sil == 1
        img[on] = tex[on]
        return img


@dataclass(frozen=True)
class Sample:
    """One annotated object instance from a scene.

    ``sv``/``si``/``sf`` are the visible/invisible/full masks; ``unoccluded``
    is the object rendered alone over the scene background, which is the
    painting target for the hidden region.
    """

    object_id: int
    image: np.ndarray
    sv: np.ndarray
    si: np.ndarray
    sf: np.ndarray
    bbox: BBox
    occluders: tuple[int, ...]
    unoccluded: np.ndarray


@dataclass(frozen=True)
class SceneConfig:
    width: int = 128
    height: int = 128
    sprite_count: tuple[int, int] = (3, 6)
    size_range: tuple[float, float] = (0.15, 0.45)
    shapes: tuple[str, ...] = SHAPE_KINDS
    textures: tuple[str, ...] = TEXTURE_KINDS
    min_silhouette: int = 30
    occlusion_prob: float = 1.0
    period_range: tuple[float, float] = (4.0, 16.0)

    def validate(self) -> None:
        if self.width < 4 or self.height < 4:
            raise ValueError(f"canvas too small: {self.width}x{self.height}")
        lo, hi = self.sprite_count
        if not 0 <= lo <= hi:
            raise ValueError(f"bad sprite count range {self.sprite_count}")
        slo, shi = self.size_range
        if not 0.0 < slo <= shi:
            raise ValueError(f"bad size range {self.size_range}")
        if shi > 1.0:
            raise ValueError(
                f"size fraction {shi} would exceed the canvas (sprites larger than canvas)"
            )
        if self.min_silhouette > self.width * self.height:
            raise ValueError(
                f"min_silhouette {self.min_silhouette} exceeds canvas area"
            )
        for s in self.shapes:
            if s not in SHAPE_KINDS:
                raise ValueError(f"unknown shape kind {s!r}")
        for t in self.textures:
            if t not in TEXTURE_KINDS:
                raise ValueError(f"unknown texture kind {t!r}")
        if not 0.0 <= self.occlusion_prob <= 1.0:
            raise ValueError(f"occlusion_prob must be in [0,1], got {self.occlusion_prob}")


def _distinct_colors(rng: np.random.Generator, count: int) -> list[tuple[int, int, int]]:
    """Draw ``count`` pairwise-distinct 8-bit RGB triples."""
    seen: set[tuple[int, int, int]] = set()
    out: list[tuple[int, int, int]] = []
    while len(out) < count:
        c = tuple(int(v) for v in rng.integers(0, 256, size=3))
        if c not in seen:
            seen.add(c)
            out.append(c)
    return out


def _make_texture(kind: str, colors: list[tuple[int, int, int]], cfg: SceneConfig,
                  rng: np.random.Generator) -> Texture:
    """Build a texture, consuming one or two colors from the scene pool."""
    if kind == "solid":
        return Texture("solid", colors.pop())
    period = float(rng.uniform(*cfg.period_range))
    angle = float(rng.uniform(0.0, np.pi)) if kind == "stripes" else 0.0
    return Texture(kind, colors.pop(), colors.pop(), period=period, angle=angle)


def generate_scene(cfg: SceneConfig, rng: np.random.Generator) -> LayeredScene:
    """Place textured sprites on a canvas, deterministic for a given generator.

    Sprites are drawn fully inside the canvas and re-posed until their
    silhouette reaches ``cfg.min_silhouette`` pixels. When the scene has at
    least two sprites, an occlusion pair is enforced with probability
    ``cfg.occlusion_prob`` by re-centering the second sprite onto the first
    if no overlap occurred naturally.
    """
    cfg.validate()
    w, h = cfg.width, cfg.height
    n = int(rng.integers(cfg.sprite_count[0], cfg.sprite_count[1] + 1))
    colors = _distinct_colors(rng, 2 * n + 2)

    bg_kind = str(rng.choice(["solid", "stripes"]))
    background = _make_texture(bg_kind, colors, cfg, rng)

    sprites: list[Sprite] = []
    sils: list[np.ndarray] = []
    half = min(w, h) / 2.0
    for rank in range(n):
        kind = str(rng.choice(list(cfg.shapes)))
        tex = _make_texture(str(rng.choice(list(cfg.textures))), colors, cfg, rng)
        unit_verts: tuple[tuple[float, float], ...] = ()
        if kind == "polygon":
            k = int(rng.integers(5, 9))
            angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, size=k))
            unit_verts = tuple((float(np.cos(a)), float(np.sin(a))) for a in angles)
        placed = None
        for _ in range(_PLACEMENT_TRIES):
            rx = float(rng.uniform(*cfg.size_range)) * half
            ry = float(rng.uniform(*cfg.size_range)) * half
            angle = float(rng.uniform(0.0, 2.0 * np.pi))
            cx = float(rng.uniform(rx, w - rx))
            cy = float(rng.uniform(ry, h - ry))
            sprite = Sprite(kind, cx, cy, rx, ry, angle, tex, rank, unit_verts)
            sil = sprite.silhouette(h, w)
            if int(sil.sum()) >= cfg.min_silhouette:
                placed = (sprite, sil)
                break
        if placed is None:
            raise RuntimeError(
                f"could not place a {kind} sprite with >= {cfg.min_silhouette} pixels; "
                "the scene config looks unsatisfiable"
            )
        sprites.append(placed[0])
        sils.append(placed[1])

    if n >= 2 and float(rng.random()) < cfg.occlusion_prob:
        stack = np.stack(sils)
        if not np.any(stack.sum(axis=0) > 1):
            anchor = sprites[0]
            moved = Sprite(
                sprites[1].kind, anchor.cx, anchor.cy, sprites[1].rx, sprites[1].ry,
                sprites[1].angle, sprites[1].texture, sprites[1].depth_rank,
                sprites[1].unit_verts,
            )
            sprites[1] = moved
            sils[1] = moved.silhouette(h, w)

    return LayeredScene(w, h, background, sprites)


def visible_masks_zorder(scene: LayeredScene, sils: np.ndarray | None = None) -> np.ndarray:
    """Visible masks from direct z-order rasterization (front-most owner wins).

    Independent of the render-and-compare derivation in ``derive_masks``;
    the two must agree.
    """
    if sils is None:
        sils = scene.silhouettes()
    order = sorted(range(len(scene.sprites)), key=lambda i: scene.sprites[i].depth_rank)
    owner_pos = kernels.front_owner(sils[order]) if len(order) else None
    out = np.zeros_like(sils)
    for pos, idx in enumerate(order):
        out[idx] = (owner_pos == pos).astype(np.uint8)
    return out


def derive_masks(scene: LayeredScene, min_visible: int = 10) -> list[Sample]:
    """Derive per-object (SV, SI, SF) triples by render-alone comparison.

    For each sprite the scene is rendered with all other sprites removed;
    pixels inside the sprite's silhouette whose color matches the composite
    render are visible, the rest of the silhouette is the hidden region.
    Objects with fewer than ``min_visible`` visible pixels are dropped.
    """
    h, w = scene.height, scene.width
    sils = scene.silhouettes()
    composite = scene.render(sils)
    image = composite.astype(np.float32) / 255.0

    n = len(scene.sprites)
    alone = [scene.render_alone(k, sils[k]) for k in range(n)]
    sv_all = np.zeros_like(sils)
    for k in range(n):
        eq = np.all(alone[k] == composite, axis=2)
        sv_all[k] = ((sils[k] == 1) & eq).astype(np.uint8)

    samples: list[Sample] = []
    for k in range(n):
        sv = sv_all[k]
        if int(sv.sum()) < min_visible:
            continue
        sf = sils[k]
        si = ((sf == 1) & (sv == 0)).astype(np.uint8)
        ys, xs = np.nonzero(sf)
        bbox = BBox(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
        rank_k = scene.sprites[k].depth_rank
        occluders = tuple(
            q for q in range(n)
            if q != k
            and scene.sprites[q].depth_rank < rank_k
            and np.any((sv_all[q] == 1) & (si == 1))
        )
        samples.append(
            Sample(
                object_id=k,
                image=image,
                sv=sv.astype(np.float32),
                si=si.astype(np.float32),
                sf=sf.astype(np.float32),
                bbox=bbox,
                occluders=occluders,
                unoccluded=alone[k].astype(np.float32) / 255.0,
            )
        )
    return samples


# ---------------------------------------------------------------------------
# Dataset persistence
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    train_scenes: int = 20
    test_scenes: int = 8
    seed: int = 0
    min_visible: int = 10
    train_seed_offset: int = 0
    test_seed_offset: int = 1_000_000

    def validate(self) -> None:
        self.scene.validate()
        if self.train_scenes < 0 or self.test_scenes < 0:
            raise ValueError("scene counts must be nonnegative")
        tr = range(self.train_seed_offset, self.train_seed_offset + self.train_scenes)
        te = range(self.test_seed_offset, self.test_seed_offset + self.test_scenes)
        if set(tr) & set(te):
            raise ValueError(
                f"train and test scene seed ranges overlap: {tr} vs {te}"
            )


@dataclass(frozen=True)
class SampleRecord:
    sample_key: str
    scene_key: str
    split: str
    object_id: int
    image: str
    sv: str
    si: str
    sf: str
    unoccluded: str
    bbox: tuple[int, int, int, int]
    occluders: tuple[int, ...]


@dataclass(frozen=True)
class SceneRecord:
    scene_key: str
    split: str
    entropy: tuple[int, ...]
    n_samples: int


@dataclass
class DatasetManifest:
    """Index of a dataset on disk; paths are relative to the manifest's directory."""

    root: Path
    canvas: tuple[int, int]
    seed: int
    min_visible: int
    scene_config: SceneConfig
    scenes: list[SceneRecord]
    samples: list[SampleRecord]
    version: int = MANIFEST_VERSION

    def indices(self, split: str | None = None) -> list[int]:
        if split is None:
            return list(range(len(self.samples)))
        return [i for i, rec in enumerate(self.samples) if rec.split == split]

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "canvas": list(self.canvas),
            "seed": self.seed,
            "min_visible": self.min_visible,
            "scene_config": _scene_config_to_dict(self.scene_config),
            "scenes": [
                {
                    "scene_key": s.scene_key,
                    "split": s.split,
                    "entropy": list(s.entropy),
                    "n_samples": s.n_samples,
                }
                for s in self.scenes
            ],
            "samples": [
                {
                    "sample_key": r.sample_key,
                    "scene_key": r.scene_key,
                    "split": r.split,
                    "object_id": r.object_id,
                    "image": r.image,
                    "sv": r.sv,
                    "si": r.si,
                    "sf": r.sf,
                    "unoccluded": r.unoccluded,
                    "bbox": list(r.bbox),
                    "occluders": list(r.occluders),
                }
                for r in self.samples
            ],
        }

    def save(self) -> Path:
        path = self.root / MANIFEST_NAME
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        return path


def _scene_config_to_dict(cfg: SceneConfig) -> dict:
    return {
        "width": cfg.width,
        "height": cfg.height,
        "sprite_count": list(cfg.sprite_count),
        "size_range": list(cfg.size_range),
        "shapes": list(cfg.shapes),
        "textures": list(cfg.textures),
        "min_silhouette": cfg.min_silhouette,
        "occlusion_prob": cfg.occlusion_prob,
        "period_range": list(cfg.period_range),
    }


def _scene_config_from_dict(d: dict) -> SceneConfig:
    return SceneConfig(
        width=d["width"],
        height=d["height"],
        sprite_count=tuple(d["sprite_count"]),
        size_range=tuple(d["size_range"]),
        shapes=tuple(d["shapes"]),
        textures=tuple(d["textures"]),
        min_silhouette=d["min_silhouette"],
        occlusion_prob=d["occlusion_prob"],
        period_range=tuple(d["period_range"]),
    )


def _save_png(path: Path, arr: np.ndarray) -> None:
    Image.fromarray(arr).save(path)


def _load_png(path: Path) -> np.ndarray:
    if not path.exists():
        raise ValueError(f"dataset file missing: {path}")
    try:
        with Image.open(path) as im:
            return np.asarray(im)
    except Exception as exc:
        raise ValueError(f"failed to decode {path}: {exc}") from exc


def _mask_to_png(mask: np.ndarray) -> np.ndarray:
    return (np.asarray(mask) >= 0.5).astype(np.uint8) * 255


def scene_rng(seed: int, scene_entropy: int) -> np.random.Generator:
    """Generator for one scene; the (seed, entropy) pair is recorded in manifests."""
    return np.random.default_rng([seed, scene_entropy])


def build_dataset(cfg: DatasetConfig, out_dir: str | Path) -> DatasetManifest:
    """Generate train/test scenes, write all rasters and the manifest to disk."""
    cfg.validate()
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)

    scenes: list[SceneRecord] = []
    records: list[SampleRecord] = []
    splits = (
        ("train", cfg.train_scenes, cfg.train_seed_offset),
        ("test", cfg.test_scenes, cfg.test_seed_offset),
    )
    for split, count, offset in splits:
        for i in range(count):
            entropy = offset + i
            rng = scene_rng(cfg.seed, entropy)
            scene = generate_scene(cfg.scene, rng)
            samples = derive_masks(scene, cfg.min_visible)
            scene_key = f"{split}_{entropy:07d}"
            scene_dir = root / split / scene_key
            scene_dir.mkdir(parents=True, exist_ok=True)
            rel = Path(split) / scene_key
            image_rel = str(rel / "image.png")
            _save_png(root / image_rel, (samples[0].image * 255).astype(np.uint8)
                      if samples else scene.render())
            for s in samples:
                stem = f"obj{s.object_id:02d}"
                paths = {
                    "sv": str(rel / f"{stem}_sv.png"),
                    "si": str(rel / f"{stem}_si.png"),
                    "sf": str(rel / f"{stem}_sf.png"),
                    "unoccluded": str(rel / f"{stem}_unocc.png"),
                }
                _save_png(root / paths["sv"], _mask_to_png(s.sv))
                _save_png(root / paths["si"], _mask_to_png(s.si))
                _save_png(root / paths["sf"], _mask_to_png(s.sf))
                _save_png(root / paths["unoccluded"], (s.unoccluded * 255).astype(np.uint8))
                records.append(
                    SampleRecord(
                        sample_key=f"{scene_key}_{stem}",
                        scene_key=scene_key,
                        split=split,
                        object_id=s.object_id,
                        image=image_rel,
                        sv=paths["sv"],
                        si=paths["si"],
                        sf=paths["sf"],
                        unoccluded=paths["unoccluded"],
                        bbox=s.bbox.astuple(),
                        occluders=s.occluders,
                    )
                )
            scenes.append(SceneRecord(scene_key, split, (cfg.seed, entropy), len(samples)))

    manifest = DatasetManifest(
        root=root,
        canvas=(cfg.scene.width, cfg.scene.height),
        seed=cfg.seed,
        min_visible=cfg.min_visible,
        scene_config=cfg.scene,
        scenes=scenes,
        samples=records,
    )
    manifest.save()
    return manifest


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read a manifest file (or the directory containing one)."""
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST_NAME
    if not p.exists():
        raise ValueError(f"manifest not found: {p}")
    d = json.loads(p.read_text())
    if d.get("version") != MANIFEST_VERSION:
        raise ValueError(
            f"unsupported manifest version {d.get('version')} (expected {MANIFEST_VERSION})"
        )
    return DatasetManifest(
        root=p.parent,
        canvas=tuple(d["canvas"]),
        seed=d["seed"],
        min_visible=d["min_visible"],
        scene_config=_scene_config_from_dict(d["scene_config"]),
        scenes=[
            SceneRecord(s["scene_key"], s["split"], tuple(s["entropy"]), s["n_samples"])
            for s in d["scenes"]
        ],
        samples=[
            SampleRecord(
                sample_key=r["sample_key"],
                scene_key=r["scene_key"],
                split=r["split"],
                object_id=r["object_id"],
                image=r["image"],
                sv=r["sv"],
                si=r["si"],
                sf=r["sf"],
                unoccluded=r["unoccluded"],
                bbox=tuple(r["bbox"]),
                occluders=tuple(r["occluders"]),
            )
            for r in d["samples"]
        ],
        version=d["version"],
    )


def load_sample(manifest: DatasetManifest, index: int) -> Sample:
    """Decode one sample from disk and verify its mask invariants."""
    if not 0 <= index < len(manifest.samples):
        raise ValueError(
            f"sample index {index} out of range [0, {len(manifest.samples)})"
        )
    rec = manifest.samples[index]
    root = manifest.root
    image = _load_png(root / rec.image).astype(np.float32) / 255.0
    unoccluded = _load_png(root / rec.unoccluded).astype(np.float32) / 255.0
    sv = (_load_png(root / rec.sv) > 127).astype(np.float32)
    si = (_load_png(root / rec.si) > 127).astype(np.float32)
    sf = (_load_png(root / rec.sf) > 127).astype(np.float32)
    if np.any((sv == 1) & (si == 1)):
        raise ValueError(f"visible/invisible masks overlap in {root / rec.sv}")
    if not np.array_equal(np.maximum(sv, si), sf):
        raise ValueError(
            f"visible and invisible masks do not tile the full mask in {root / rec.sf}"
        )
    return Sample(
        object_id=rec.object_id,
        image=image,
        sv=sv,
        si=si,
        sf=sf,
        bbox=BBox(*rec.bbox),
        occluders=rec.occluders,
        unoccluded=unoccluded,
    )
