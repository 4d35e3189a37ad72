"""Encoder and modulated decoder networks.

The decoder is a stack of resolution blocks driven by a constant 4x4 canvas;
the latent code never enters the data path directly, it only sets per-map
statistics through the modulation maps. Each block holds two 3x3 conv layers:
the first is followed by binomial smoothing, per-layer noise, activation and
renormalization; the second skips the smoothing. The encoder mirrors the
structure with spectrally normalized convs and produces unit-norm codes.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.parametrizations import spectral_norm

from .config import NetworkConfig
from .errors import ContractViolation
from .ops import (
    EqualizedConv2d,
    ModulationMap,
    adain,
    binomial_filter,
    binomial_kernel,
    downsample2x,
    normalize_latent,
    upsample2x,
)


@dataclass(frozen=True)
class BlockSpec:
    index: int      # 1-based position in the stack
    level: int      # resolution level this block outputs at
    in_ch: int
    out_ch: int
    upsample: bool


def build_block_specs(cfg: NetworkConfig) -> list[BlockSpec]:
    specs: list[BlockSpec] = []
    prev_ch = cfg.channel_schedule[0]
    for level in range(cfg.max_level + 1):
        out_ch = cfg.channel_schedule[level]
        specs.append(BlockSpec(len(specs) + 1, level, prev_ch, out_ch, upsample=level > 0))
        prev_ch = out_ch
        if cfg.extra_block_level == level:
            specs.append(BlockSpec(len(specs) + 1, level, out_ch, out_ch, upsample=False))
    return specs


class DecoderBlock(nn.Module):
    def __init__(self, spec: BlockSpec, latent_dim: int, slope: float):
        super().__init__()
        self.spec = spec
        self.slope = slope
        self.conv1 = EqualizedConv2d(spec.in_ch, spec.out_ch, 3, padding=1)
        self.conv2 = EqualizedConv2d(spec.out_ch, spec.out_ch, 3, padding=1)
        self.mod1 = ModulationMap(latent_dim, spec.out_ch)
        self.mod2 = ModulationMap(latent_dim, spec.out_ch)
        self.noise_scale1 = nn.Parameter(torch.zeros(()))
        self.noise_scale2 = nn.Parameter(torch.zeros(()))
        self.register_buffer("smooth", binomial_kernel(), persistent=False)

    def forward(self, x: torch.Tensor, z: torch.Tensor,
                noise: tuple[torch.Tensor, torch.Tensor] | None) -> torch.Tensor:
        if self.spec.upsample:
            x = upsample2x(x)
        h = binomial_filter(self.conv1(x), self.smooth)
        if noise is not None:
            h = h + self.noise_scale1 * noise[0]
        h = F.leaky_relu(h, self.slope)
        m, s = self.mod1(z)
        h = adain(h, m, s)
        h = self.conv2(h)
        if noise is not None:
            h = h + self.noise_scale2 * noise[1]
        h = F.leaky_relu(h, self.slope)
        m, s = self.mod2(z)
        return adain(h, m, s)


class Decoder(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.specs = build_block_specs(cfg)
        self.blocks = nn.ModuleList(
            DecoderBlock(spec, cfg.latent_dim, cfg.leaky_slope) for spec in self.specs
        )
        # one RGB head per level, read off the last block of that level
        self.rgb = nn.ModuleList(
            EqualizedConv2d(cfg.channel_schedule[lvl], cfg.img_channels, 1)
            for lvl in range(cfg.max_level + 1)
        )

    @property
    def n_blocks(self) -> int:
        return len(self.specs)

    def active_blocks(self, level: int) -> int:
        """Number of stack positions in use at a given resolution level."""
        if not 0 <= level <= self.cfg.max_level:
            raise ContractViolation(f"level {level} outside [0, {self.cfg.max_level}]")
        return sum(1 for s in self.specs if s.level <= level)

    def last_block_of_level(self, level: int) -> int:
        return max(s.index for s in self.specs if s.level == level)

    def canvas(self, batch: int, dtype=None, device=None) -> torch.Tensor:
        c0 = self.cfg.channel_schedule[0]
        p = next(self.parameters())
        return torch.ones(batch, c0, 4, 4,
                          dtype=dtype or p.dtype, device=device or p.device)

    def make_noise(self, batch: int, level: int,
                   generator: torch.Generator | None = None,
                   dtype=None, device=None) -> list[tuple[torch.Tensor, torch.Tensor]]:
        """Per-pixel unit Gaussian noise, one [B,1,H,W] map per conv layer.

        Drawn in block order so two calls with equally seeded generators
        agree on every block they share.
        """
        p = next(self.parameters())
        dtype = dtype or p.dtype
        device = device or p.device
        out = []
        for spec in self.specs[: self.active_blocks(level)]:
            res = self.cfg.resolution(spec.level)
            shape = (batch, 1, res, res)
            n1 = torch.randn(*shape, generator=generator, dtype=dtype, device=device)
            n2 = torch.randn(*shape, generator=generator, dtype=dtype, device=device)
            out.append((n1, n2))
        return out

    def run_range(self, x: torch.Tensor, codes: list[torch.Tensor],
                  noise: list | None, first: int, last: int,
                  record: list | None = None) -> torch.Tensor:
        """Run blocks first..last (1-based, inclusive) from canvas x."""
        if not 1 <= first <= last <= self.n_blocks:
            raise ContractViolation(f"block range {first}..{last} invalid for {self.n_blocks} blocks")
        for i in range(first, last + 1):
            blk = self.blocks[i - 1]
            x = blk(x, codes[i - 1], None if noise is None else noise[i - 1])
            if record is not None:
                record.append(x)
        return x

    def to_image(self, canvas: torch.Tensor, level: int) -> torch.Tensor:
        return torch.tanh(self.rgb[level](canvas))

    def forward(self, codes: list[torch.Tensor], level: int, fade_alpha: float,
                noise: list | None) -> torch.Tensor:
        n_active = self.active_blocks(level)
        if len(codes) != n_active:
            raise ContractViolation(f"got {len(codes)} block codes, phase needs {n_active}")
        batch = codes[0].shape[0]
        x = self.canvas(batch, dtype=codes[0].dtype, device=codes[0].device)
        prev_canvas = None
        prev_last = self.last_block_of_level(level - 1) if level > 0 else None
        for i in range(1, n_active + 1):
            x = self.blocks[i - 1](x, codes[i - 1], None if noise is None else noise[i - 1])
            if prev_last is not None and i == prev_last:
                prev_canvas = x
        img = self.to_image(x, level)
        if level > 0 and fade_alpha < 1.0:
            prev_img = self.to_image(prev_canvas, level - 1)
            img = (1.0 - fade_alpha) * upsample2x(prev_img) + fade_alpha * img
        return img


def _sn_conv(in_ch: int, out_ch: int, kernel: int, padding: int = 0) -> nn.Module:
    return spectral_norm(nn.Conv2d(in_ch, out_ch, kernel, padding=padding))


class EncoderBlock(nn.Module):
    """Two spectrally normalized convs followed by 2x average pooling."""

    def __init__(self, in_ch: int, out_ch: int, slope: float):
        super().__init__()
        self.conv1 = _sn_conv(in_ch, in_ch, 3, padding=1)
        self.conv2 = _sn_conv(in_ch, out_ch, 3, padding=1)
        self.slope = slope

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.leaky_relu(self.conv1(x), self.slope)
        x = F.leaky_relu(self.conv2(x), self.slope)
        return downsample2x(x)


class Encoder(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.channel_schedule
        self.from_rgb = nn.ModuleList(
            _sn_conv(cfg.img_channels, ch[lvl], 1) for lvl in range(cfg.max_level + 1)
        )
        # block at level L maps level-L features down to level L-1
        self.blocks = nn.ModuleList(
            EncoderBlock(ch[lvl], ch[lvl - 1], cfg.leaky_slope)
            for lvl in range(1, cfg.max_level + 1)
        )
        self.head_conv = _sn_conv(ch[0], ch[0], 3, padding=1)
        self.head_fc = spectral_norm(nn.Linear(ch[0] * 16, cfg.latent_dim))
        self.slope = cfg.leaky_slope

    def forward(self, x: torch.Tensor, level: int, fade_alpha: float) -> torch.Tensor:
        res = self.cfg.resolution(level)
        if x.shape[-2:] != (res, res):
            raise ContractViolation(f"input is {tuple(x.shape[-2:])}, phase expects {res}x{res}")
        h = F.leaky_relu(self.from_rgb[level](x), self.slope)
        for lvl in range(level, 0, -1):
            h = self.blocks[lvl - 1](h)
            if lvl == level and fade_alpha < 1.0:
                skip = F.leaky_relu(self.from_rgb[level - 1](downsample2x(x)), self.slope)
                h = fade_alpha * h + (1.0 - fade_alpha) * skip
        h = F.leaky_relu(self.head_conv(h), self.slope)
        z = self.head_fc(h.flatten(1))
        return normalize_latent(z)
