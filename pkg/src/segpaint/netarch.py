"""The three networks: mask segmentor, paint generator, pair discriminator.

Data flow: the segmentor takes a four-channel tensor (RGB + visible mask),
runs a small residual backbone down to a single-channel map, pools the
object's box region to a fixed grid, and maps it through one fully
connected layer to an m x m sigmoid mask ``o``. A parameter-free bilinear
upsample lifts ``o`` to the painting resolution ``O``. The conditioning
image for the generator copies real pixels on the visible region, paints
the predicted-but-hidden region red and the rest blue; binarization of
``O`` uses a straight-through gradient so painting losses reach the
segmentor. The generator is an encoder-decoder with skip connections, the
discriminator scores (condition, judged) pairs through four conv layers
and a sigmoid.

Checkpoints use a self-describing binary container (JSON header + raw
array payload) whose bytes are deterministic for identical contents.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

CHECKPOINT_MAGIC = b"SEGPAINTCKPT\n"
CHECKPOINT_VERSION = 1

NOISE_MODES = ("dropout", "input_channel", "none")


@dataclass(frozen=True)
class NetConfig:
    """Shapes and capacity knobs shared by all three networks.

    Defaults are the full-scale sizes (500 input, 58 mask, 256 paint);
    ``desk()`` returns the reduced configuration used throughout the test
    and example flows.
    """

    input_size: int = 500
    roi_grid: int = 14
    mask_size: int = 58
    paint_size: int = 256
    backbone_width: int = 32
    backbone_depth: int = 3
    generator_depth: int = 6
    generator_width: int = 64
    disc_width: int = 64
    noise_mode: str = "dropout"

    @classmethod
    def desk(cls, **overrides) -> "NetConfig":
        cfg = cls(
            input_size=128,
            roi_grid=8,
            mask_size=32,
            paint_size=64,
            backbone_width=24,
            backbone_depth=2,
            generator_depth=4,
            generator_width=32,
            disc_width=32,
        )
        return replace(cfg, **overrides)

    def validate(self) -> None:
        for name in ("input_size", "roi_grid", "mask_size", "paint_size",
                     "backbone_width", "generator_depth", "generator_width",
                     "disc_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.backbone_depth < 0:
            raise ValueError(f"backbone_depth must be >= 0, got {self.backbone_depth}")
        if self.paint_size % (2 ** self.generator_depth) != 0:
            raise ValueError(
                f"paint_size {self.paint_size} not divisible by "
                f"2^generator_depth = {2 ** self.generator_depth}"
            )
        stride = 2 ** self.backbone_depth
        if self.input_size // stride < self.roi_grid:
            raise ValueError(
                f"feature map {self.input_size // stride} smaller than roi_grid {self.roi_grid}"
            )
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}, got {self.noise_mode!r}")

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size,
            "roi_grid": self.roi_grid,
            "mask_size": self.mask_size,
            "paint_size": self.paint_size,
            "backbone_width": self.backbone_width,
            "backbone_depth": self.backbone_depth,
            "generator_depth": self.generator_depth,
            "generator_width": self.generator_width,
            "disc_width": self.disc_width,
            "noise_mode": self.noise_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**d)


class _ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        if stride != 1 or cin != cout:
            self.skip = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False), nn.BatchNorm2d(cout)
            )
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        h = F.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return F.relu(h + self.skip(x))


class Backbone(nn.Module):
    """Four-channel input to a single-channel spatial map.

    ``depth`` residual blocks each halve the resolution; depth 0 degrades
    to a lone 1x1 conv (receptive field of one pixel), which some tests use
    to isolate the box pooling from the backbone's spatial context.
    """

    def __init__(self, width: int, depth: int, in_ch: int = 4):
        super().__init__()
        self.depth = depth
        self.stride = 2 ** depth
        if depth == 0:
            self.body = nn.Identity()
            self.head = nn.Conv2d(in_ch, 1, 1)
            self.feature_channels = in_ch
            return
        layers: list[nn.Module] = [
            nn.Conv2d(in_ch, width, 3, padding=1, bias=False),
            nn.BatchNorm2d(width),
            nn.ReLU(inplace=True),
        ]
        ch = width
        for i in range(depth):
            nxt = min(width * (2 ** (i + 1)), width * 8)
            layers.append(_ResBlock(ch, nxt, stride=2))
            ch = nxt
        self.body = nn.Sequential(*layers)
        self.head = nn.Conv2d(ch, 1, 1)
        self.feature_channels = ch

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))


def roi_max_pool(
    feat: torch.Tensor, box: tuple[int, int, int, int], stride: int, grid: int
) -> torch.Tensor:
    """Max-pool the feature-map region under an input-space box to (grid, grid).

    ``feat`` is (C, H, W); the box is half-open input-space pixel coords.
    Box edges map to feature coordinates by dividing by ``stride``, rounding
    outward.
    """
    x0, y0, x1, y1 = box
    _, fh, fw = feat.shape
    ix0 = max(0, int(np.floor(x0 / stride)))
    iy0 = max(0, int(np.floor(y0 / stride)))
    ix1 = min(fw, int(np.ceil(x1 / stride)))
    iy1 = min(fh, int(np.ceil(y1 / stride)))
    ix1 = max(ix1, ix0 + 1)
    iy1 = max(iy1, iy0 + 1)
    crop = feat[:, iy0:iy1, ix0:ix1]
    return F.adaptive_max_pool2d(crop, (grid, grid))


class Segmentor(nn.Module):
    """(image, visible mask, box) -> low-res mask ``o`` and its upsample ``O``."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = Backbone(cfg.backbone_width, cfg.backbone_depth)
        self.fc = nn.Linear(cfg.roi_grid ** 2, cfg.mask_size ** 2)

    def forward(
        self, x: torch.Tensor, boxes: np.ndarray | torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        cfg = self.cfg
        if x.dim() != 4 or x.shape[1] != 4:
            raise ValueError(f"expected (N, 4, H, W) input, got {tuple(x.shape)}")
        if x.shape[2] != cfg.input_size or x.shape[3] != cfg.input_size:
            raise ValueError(
                f"input spatial size {tuple(x.shape[2:])} != configured {cfg.input_size}"
            )
        boxes = np.asarray(boxes)
        if boxes.shape != (x.shape[0], 4):
            raise ValueError(f"boxes must be (N, 4), got {boxes.shape}")
        s = cfg.input_size
        for b in boxes:
            x0, y0, x1, y1 = (int(v) for v in b)
            if not (0 <= x0 < x1 <= s and 0 <= y0 < y1 <= s):
                raise ValueError(f"box {(x0, y0, x1, y1)} outside {s}x{s} image")
        feat = self.backbone(x)
        pooled = torch.stack(
            [
                roi_max_pool(feat[i], tuple(int(v) for v in boxes[i]),
                             self.backbone.stride, cfg.roi_grid)
                for i in range(x.shape[0])
            ]
        )
        logits = self.fc(pooled.flatten(1))
        o = torch.sigmoid(logits).view(-1, 1, cfg.mask_size, cfg.mask_size)
        if not torch.isfinite(o).all():
            raise RuntimeError("non-finite segmentor activations")
        # parameter-free lift of the low-res mask to painting resolution
        big = F.interpolate(
            o, size=(cfg.paint_size, cfg.paint_size), mode="bilinear", align_corners=False
        )
        return o, big


class UNetGenerator(nn.Module):
    """Encoder-decoder painter with skip connections and sigmoid output.

    ``noise_mode`` selects how stochasticity enters: decoder dropout that is
    active in train mode, an extra Gaussian input channel, or none.
    ``use_skips=False`` drops the skip connections (ablation support).
    """

    def __init__(
        self,
        depth: int = 4,
        width: int = 32,
        in_ch: int = 3,
        out_ch: int = 3,
        noise_mode: str = "dropout",
        use_skips: bool = True,
    ):
        super().__init__()
        if noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
        self.depth = depth
        self.noise_mode = noise_mode
        self.use_skips = use_skips
        enc_chs = [min(width * 2 ** i, width * 8) for i in range(depth)]
        first_in = in_ch + (1 if noise_mode == "input_channel" else 0)

        self.downs = nn.ModuleList()
        for i, ch in enumerate(enc_chs):
            cin = first_in if i == 0 else enc_chs[i - 1]
            block: list[nn.Module] = [nn.Conv2d(cin, ch, 4, stride=2, padding=1, bias=i == 0)]
            if i > 0:
                block.append(nn.BatchNorm2d(ch))
            block.append(nn.LeakyReLU(0.2, inplace=True))
            self.downs.append(nn.Sequential(*block))

        self.ups = nn.ModuleList()
        for j in range(depth):
            level = depth - 1 - j
            if j == 0:
                cin = enc_chs[level]
            else:
                cin = enc_chs[level] * (2 if use_skips else 1)
            if j < depth - 1:
                cout = enc_chs[level - 1]
                block = [nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1, bias=False),
                         nn.BatchNorm2d(cout)]
                if noise_mode == "dropout" and j < 3:
                    block.append(nn.Dropout(0.5))
                block.append(nn.ReLU(inplace=True))
            else:
                block = [nn.ConvTranspose2d(cin, out_ch, 4, stride=2, padding=1)]
            self.ups.append(nn.Sequential(*block))

    def forward(self, x: torch.Tensor, noise: torch.Tensor | None = None) -> torch.Tensor:
        if x.dim() != 4:
            raise ValueError(f"expected (N, C, H, W) input, got {tuple(x.shape)}")
        if x.shape[2] % (2 ** self.depth) or x.shape[3] % (2 ** self.depth):
            raise ValueError(
                f"input spatial size {tuple(x.shape[2:])} not divisible by 2^{self.depth}"
            )
        if self.noise_mode == "input_channel":
            if noise is None:
                noise = torch.randn(x.shape[0], 1, x.shape[2], x.shape[3],
                                    dtype=x.dtype, device=x.device)
            x = torch.cat([x, noise], dim=1)
        skips = []
        h = x
        for down in self.downs:
            h = down(h)
            skips.append(h)
        for j, up in enumerate(self.ups):
            h = up(h)
            level = self.depth - 1 - j
            if self.use_skips and level - 1 >= 0:
                h = torch.cat([h, skips[level - 1]], dim=1)
        return torch.sigmoid(h)


class PatchDiscriminator(nn.Module):
    """(condition, judged) image pair -> realness score grid in (0, 1)."""

    def __init__(self, width: int = 32, in_ch: int = 6):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_ch, width, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(width, width * 2, 4, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(width * 2),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(width * 2, width * 4, 4, stride=1, padding=1, bias=False),
            nn.BatchNorm2d(width * 4),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(width * 4, 1, 4, stride=1, padding=1),
            nn.Sigmoid(),
        )

    def forward(self, cond: torch.Tensor, judged: torch.Tensor) -> torch.Tensor:
        if cond.shape != judged.shape:
            raise ValueError(
                f"condition/judged shape mismatch {tuple(cond.shape)} vs {tuple(judged.shape)}"
            )
        return self.net(torch.cat([cond, judged], dim=1))


class SegPaintNet(nn.Module):
    """Container for the segmentor, generator and discriminator of one run."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.segmentor = Segmentor(cfg)
        self.generator = UNetGenerator(
            depth=cfg.generator_depth, width=cfg.generator_width,
            noise_mode=cfg.noise_mode,
        )
        self.discriminator = PatchDiscriminator(width=cfg.disc_width)

    def paint(self, m_input: torch.Tensor, noise: torch.Tensor | None = None) -> torch.Tensor:
        if m_input.shape[2] != self.cfg.paint_size or m_input.shape[3] != self.cfg.paint_size:
            raise ValueError(
                f"generator input {tuple(m_input.shape[2:])} != paint size {self.cfg.paint_size}"
            )
        return self.generator(m_input, noise=noise)


class _BinarizeSTE(torch.autograd.Function):
    """Hard >= 0.5 threshold whose backward pass is the identity."""

    @staticmethod
    def forward(ctx, x):
        return (x >= 0.5).to(x.dtype)

    @staticmethod
    def backward(ctx, grad):
        return grad


def binarize_ste(x: torch.Tensor) -> torch.Tensor:
    return _BinarizeSTE.apply(x)


def compose_paint_input(
    image: torch.Tensor, full_soft: torch.Tensor, visible: torch.Tensor
) -> torch.Tensor:
    """Differentiable counterpart of ``maskops.compose_generator_input``.

    ``full_soft`` is the segmentor's soft upsampled mask; it is binarized
    with a straight-through gradient so painting losses backpropagate into
    the segmentor. ``visible`` must already be hard.
    """
    if image.shape[0] != full_soft.shape[0] or image.shape[2:] != full_soft.shape[2:]:
        raise ValueError(
            f"image {tuple(image.shape)} and mask {tuple(full_soft.shape)} misaligned"
        )
    if full_soft.shape != visible.shape:
        raise ValueError(
            f"mask shape mismatch {tuple(full_soft.shape)} vs {tuple(visible.shape)}"
        )
    o_hard = binarize_ste(full_soft)
    inv = o_hard * (1.0 - visible)
    bg = (1.0 - o_hard) * (1.0 - visible)
    red = image.new_zeros(3).index_fill_(0, image.new_tensor([0], dtype=torch.long), 1.0)
    blue = image.new_zeros(3).index_fill_(0, image.new_tensor([2], dtype=torch.long), 1.0)
    red = red.view(1, 3, 1, 1)
    blue = blue.view(1, 3, 1, 1)
    return image * visible + red * inv + blue * bg


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.BatchNorm2d):
        nn.init.normal_(module.weight, 1.0, 0.02)
        nn.init.zeros_(module.bias)


def init_params(cfg: NetConfig, seed: int) -> SegPaintNet:
    """Build all three networks with seeded, finite, reproducible parameters."""
    cfg.validate()
    torch.manual_seed(seed)
    net = SegPaintNet(cfg)
    net.apply(_init_weights)
    for name, p in net.named_parameters():
        if not torch.isfinite(p).all():
            raise RuntimeError(f"non-finite initial parameter {name}")
    return net


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------

def write_container(path: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write named arrays plus JSON metadata as one deterministic binary file.

    Layout: magic line, 8-byte little-endian header length, JSON header
    (sorted keys), then each array's raw C-order bytes in header order.
    """
    names = sorted(arrays)
    header = {
        "version": CHECKPOINT_VERSION,
        "meta": meta,
        "arrays": [
            {
                "name": n,
                "shape": list(arrays[n].shape),
                "dtype": str(arrays[n].dtype),
            }
            for n in names
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(arrays[n]).tobytes())


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Inverse of ``write_container``; raises ValueError on damage or version skew."""
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint container (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    if len(data) < off + 8:
        raise ValueError(f"{path}: truncated header")
    hlen = int.from_bytes(data[off : off + 8], "little")
    off += 8
    try:
        header = json.loads(data[off : off + hlen])
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: corrupt header: {exc}") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"{path}: checkpoint version {header.get('version')} "
            f"!= supported {CHECKPOINT_VERSION}"
        )
    off += hlen
    arrays: dict[str, np.ndarray] = {}
    for spec in header["arrays"]:
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64)) if spec["shape"] else 1
        nbytes = dtype.itemsize * count
        chunk = data[off : off + nbytes]
        if len(chunk) != nbytes:
            raise ValueError(f"{path}: truncated payload at array {spec['name']!r}")
        arrays[spec["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(spec["shape"]).copy()
        off += nbytes
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return header["meta"], arrays


def model_arrays(net: SegPaintNet) -> dict[str, np.ndarray]:
    return {
        f"model/{name}": t.detach().cpu().numpy()
        for name, t in net.state_dict().items()
    }


def load_model_arrays(net: SegPaintNet, arrays: dict[str, np.ndarray]) -> None:
    state = {}
    for name, t in net.state_dict().items():
        key = f"model/{name}"
        if key not in arrays:
            raise ValueError(f"checkpoint missing model array {key!r}")
        state[name] = torch.from_numpy(arrays[key].copy()).to(t.dtype)
    net.load_state_dict(state)


def save_net(path: str | Path, net: SegPaintNet, step: int = 0,
             extra_arrays: dict[str, np.ndarray] | None = None,
             extra_meta: dict | None = None) -> None:
    """Persist a model (and optional extra state) to a checkpoint file."""
    arrays = model_arrays(net)
    if extra_arrays:
        overlap = set(arrays) & set(extra_arrays)
        if overlap:
            raise ValueError(f"extra array names collide with model arrays: {overlap}")
        arrays.update(extra_arrays)
    meta = {"net_config": net.cfg.to_dict(), "step": step}
    if extra_meta:
        meta.update(extra_meta)
    write_container(path, arrays, meta)


def load_net(path: str | Path) -> tuple[SegPaintNet, dict, dict[str, np.ndarray]]:
    """Rebuild a model from a checkpoint; returns (net, meta, all arrays)."""
    meta, arrays = read_container(path)
    cfg = NetConfig.from_dict(meta["net_config"])
    net = SegPaintNet(cfg)
    load_model_arrays(net, arrays)
    return net, meta, arrays
