"""Data pipeline: folder ingestion with a consistent area-average resize
chain, mirror augmentation, flip pairing, and a synthetic dataset with
independently sampled coarse (shape+position) and fine (fill color) factors
whose labels a programmatic probe can recover.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractViolation

log = logging.getLogger(__name__)

BASE_RES = 256  # canonical top of the downsampling chain


@dataclass
class ImageRecord:
    pixels: np.ndarray  # [3, H, W] float32 in [-1, 1], H == W a power of two
    source_id: str


def block_mean_2x(arr: np.ndarray) -> np.ndarray:
    """Exact 2x2 block averaging over the trailing two dims."""
    *lead, h, w = arr.shape
    return arr.reshape(*lead, h // 2, 2, w // 2, 2).mean(axis=(-3, -1))


def downsample_to(arr: np.ndarray, res: int) -> np.ndarray:
    """Walk the block-mean chain down to the requested square resolution."""
    cur = arr.shape[-1]
    if cur < res or cur % res:
        raise ContractViolation(f"cannot area-downsample {cur} to {res}")
    while cur > res:
        arr = block_mean_2x(arr)
        cur //= 2
    return arr.astype(np.float32)


def _decode_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB")
        w, h = im.size
        side = min(w, h)
        left, top = (w - side) // 2, (h - side) // 2
        im = im.crop((left, top, left + side, top + side))
        im = im.resize((BASE_RES, BASE_RES), Image.BOX)
        arr = np.asarray(im, dtype=np.float32)
    return (arr / 255.0 * 2.0 - 1.0).transpose(2, 0, 1)


def ingest(folder: str | Path, level: int, seed: int = 0) -> list[ImageRecord]:
    """Decode every readable raster image in a folder to [-1, 1] records at
    the level's resolution, in a seed-shuffled deterministic order."""
    folder = Path(folder)
    paths = sorted(p for p in folder.iterdir() if p.is_file())
    res = 4 * 2**level
    records = []
    for p in paths:
        try:
            base = _decode_image(p)
        except Exception as e:  # unreadable files are skipped, not fatal
            log.warning("skipping unreadable image %s: %s", p, e)
            continue
        records.append(ImageRecord(pixels=downsample_to(base, res), source_id=p.name))
    if not records:
        raise ContractViolation(f"no readable images in {folder}")
    order = np.random.default_rng(seed).permutation(len(records))
    return [records[i] for i in order]


def hflip(pixels: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(pixels[..., ::-1])


def mirror(record: ImageRecord, p: float = 0.5, rng: np.random.Generator | None = None) -> ImageRecord:
    rng = rng or np.random.default_rng()
    if p > 0 and rng.random() < p:
        return ImageRecord(pixels=hflip(record.pixels), source_id=record.source_id)
    return record


def make_flip_pair(record: ImageRecord) -> tuple[ImageRecord, ImageRecord]:
    return record, ImageRecord(pixels=hflip(record.pixels), source_id=record.source_id + "#flip")


# --- synthetic factor dataset -------------------------------------------------

SHAPES = ("circle", "square", "triangle")
# six saturated hues in [-1, 1] pixel coordinates
PALETTE = np.array(
    [
        [1.0, -1.0, -1.0],   # red
        [1.0, 1.0, -1.0],    # yellow
        [-1.0, 1.0, -1.0],   # green
        [-1.0, 1.0, 1.0],    # cyan
        [-1.0, -1.0, 1.0],   # blue
        [1.0, -1.0, 1.0],    # magenta
    ],
    dtype=np.float32,
)
COLOR_NAMES = ("red", "yellow", "green", "cyan", "blue", "magenta")
BACKGROUND = np.array([-0.85, -0.85, -0.85], dtype=np.float32)


@dataclass(frozen=True)
class SyntheticFactorSpec:
    image_size: int = 32
    grid: int = 3           # positions per axis
    radius: float = 0.17    # shape radius as a fraction of image size
    n_shapes: int = len(SHAPES)
    n_colors: int = len(PALETTE)

    @property
    def n_positions(self) -> int:
        return self.grid * self.grid


@dataclass(frozen=True)
class SynthLabel:
    shape: int
    position: int
    color: int


def _shape_mask(spec: SyntheticFactorSpec, shape: int, position: int, res: int) -> np.ndarray:
    """Anti-aliased [res, res] coverage mask, rendered 4x supersampled."""
    ss = res * 4
    ys, xs = np.mgrid[0:ss, 0:ss]
    u = (xs + 0.5) / ss
    v = (ys + 0.5) / ss
    gx, gy = position % spec.grid, position // spec.grid
    cx = (gx + 0.5) / spec.grid
    cy = (gy + 0.5) / spec.grid
    r = spec.radius
    dx, dy = u - cx, v - cy
    name = SHAPES[shape]
    if name == "circle":
        inside = dx * dx + dy * dy <= r * r
    elif name == "square":
        s = r * 0.88
        inside = (np.abs(dx) <= s) & (np.abs(dy) <= s)
    else:  # triangle, apex up
        ax, ay = 0.0, -r
        bx, by = -0.95 * r, 0.75 * r
        cx2, cy2 = 0.95 * r, 0.75 * r
        d1 = (dx - ax) * (by - ay) - (dy - ay) * (bx - ax)
        d2 = (dx - bx) * (cy2 - by) - (dy - by) * (cx2 - bx)
        d3 = (dx - cx2) * (ay - cy2) - (dy - cy2) * (ax - cx2)
        inside = ((d1 <= 0) & (d2 <= 0) & (d3 <= 0)) | ((d1 >= 0) & (d2 >= 0) & (d3 >= 0))
    return downsample_to(inside.astype(np.float32)[None], res)[0]


def render_synthetic(spec: SyntheticFactorSpec, label: SynthLabel) -> np.ndarray:
    mask = _shape_mask(spec, label.shape, label.position, spec.image_size)
    color = PALETTE[label.color]
    img = BACKGROUND[:, None, None] * (1.0 - mask) + color[:, None, None] * mask
    return img.astype(np.float32)


@dataclass
class SyntheticDataset:
    images: np.ndarray  # [N, 3, S, S]
    labels: list[SynthLabel]
    spec: SyntheticFactorSpec
    seed: int

    def __len__(self) -> int:
        return len(self.labels)

    def at_level(self, level: int) -> np.ndarray:
        return downsample_to(self.images, 4 * 2**level)

    def write_folder(self, folder: str | Path) -> None:
        folder = Path(folder)
        folder.mkdir(parents=True, exist_ok=True)
        manifest = []
        for i, (img, lab) in enumerate(zip(self.images, self.labels)):
            name = f"synth_{i:05d}.png"
            arr = np.rint((img.transpose(1, 2, 0) + 1.0) / 2.0 * 255.0).clip(0, 255).astype(np.uint8)
            Image.fromarray(arr).save(folder / name)
            manifest.append({
                "id": name,
                "shape": SHAPES[lab.shape],
                "position": int(lab.position),
                "color": COLOR_NAMES[lab.color],
            })
        (folder / "labels.json").write_text(json.dumps(manifest, indent=1))


def synth_generate(spec: SyntheticFactorSpec, n: int, seed: int = 0) -> SyntheticDataset:
    """n images with independently sampled (shape, position) and color."""
    if n < 1:
        raise ContractViolation("need n >= 1 synthetic samples")
    rng = np.random.default_rng(seed)
    labels = [
        SynthLabel(
            shape=int(rng.integers(spec.n_shapes)),
            position=int(rng.integers(spec.n_positions)),
            color=int(rng.integers(spec.n_colors)),
        )
        for _ in range(n)
    ]
    images = np.stack([render_synthetic(spec, lab) for lab in labels])
    return SyntheticDataset(images=images, labels=labels, spec=spec, seed=seed)


class FactorProbe:
    """Template-correlation classifier recovering the synthetic factors.

    Shape/position come from the best-matching coverage template of the
    foreground map; color from the template-weighted mean pixel, snapped to
    the nearest palette entry. Robust to the blur of model reconstructions.
    """

    def __init__(self, spec: SyntheticFactorSpec, res: int | None = None):
        self.spec = spec
        self.res = res or spec.image_size
        templates = np.stack([
            np.stack([_shape_mask(spec, s, p, self.res) for p in range(spec.n_positions)])
            for s in range(spec.n_shapes)
        ])  # [shapes, positions, H, W]
        flat = templates.reshape(spec.n_shapes, spec.n_positions, -1)
        self.templates = templates
        self._unit = flat / np.linalg.norm(flat, axis=-1, keepdims=True).clip(1e-12)

    def foreground(self, img: np.ndarray) -> np.ndarray:
        diff = img - BACKGROUND[:, None, None]
        return np.sqrt((diff * diff).sum(axis=0))

    def classify(self, img: np.ndarray) -> SynthLabel:
        if img.shape[-1] != self.res:
            raise ContractViolation(f"probe built for {self.res}px, got {img.shape[-1]}px")
        fg = self.foreground(np.asarray(img, dtype=np.float32)).reshape(-1)
        fg = fg / max(float(np.linalg.norm(fg)), 1e-12)
        scores = self._unit @ fg
        shape, pos = np.unravel_index(int(scores.argmax()), scores.shape)
        w = self.templates[shape, pos]
        wsum = max(float(w.sum()), 1e-12)
        mean_color = (img * w[None]).sum(axis=(1, 2)) / wsum
        color = int(((PALETTE - mean_color) ** 2).sum(axis=1).argmin())
        return SynthLabel(shape=int(shape), position=int(pos), color=color)

    def accuracy(self, images: np.ndarray, labels: list[SynthLabel]) -> tuple[float, float]:
        """(shape accuracy, color accuracy) over a batch."""
        hits_s = hits_c = 0
        for img, lab in zip(images, labels):
            got = self.classify(img)
            hits_s += got.shape == lab.shape
            hits_c += got.color == lab.color
        n = len(labels)
        return hits_s / n, hits_c / n
