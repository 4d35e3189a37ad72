"""Shared helpers for the demo scripts: image grid writing and a default
desk-scale configuration."""

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from modae.config import NetworkConfig, TrainConfig

OUT = Path(__file__).parent / "out"

DESK_NET = NetworkConfig(latent_dim=32, channel_schedule=(48, 48, 32, 24), max_level=3)
DESK_TRAIN = TrainConfig(
    phase_budgets=(30_000, 40_000, 70_000, 10_000_000),
    fade_budgets=(0, 8_000, 10_000, 12_000),
    batch_schedule=(64, 64, 64, 32),
    lr_schedule=(0.001, 0.001, 0.001, 0.001),
    lambda_x=1.0,
    lambda_z=2.0,
    lambda_cycle=2.0,
    seed=1234,
)


def to_uint8(img) -> np.ndarray:
    arr = img.detach().cpu().numpy() if torch.is_tensor(img) else np.asarray(img)
    arr = np.rint((arr.transpose(1, 2, 0) + 1.0) / 2.0 * 255.0).clip(0, 255)
    return arr.astype(np.uint8)


def save_grid(images, path, cols=None, pad=2, scale=4):
    """Tile [N, 3, H, W] images into one PNG, nearest-upscaled for viewing."""
    imgs = [to_uint8(im) for im in images]
    n = len(imgs)
    cols = cols or int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    h, w, _ = imgs[0].shape
    canvas = np.full((rows * (h + pad) + pad, cols * (w + pad) + pad, 3), 30, dtype=np.uint8)
    for i, im in enumerate(imgs):
        r, c = divmod(i, cols)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        canvas[y: y + h, x: x + w] = im
    out = Image.fromarray(canvas)
    out = out.resize((canvas.shape[1] * scale, canvas.shape[0] * scale), Image.NEAREST)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    out.save(path)
    print(f"wrote {path}")
