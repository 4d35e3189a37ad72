"""User-facing generative operations over a frozen model snapshot: scale
mixing, conditional sampling, attribute vectors with layer-range restriction,
and spherical interpolation grids. All pure functions of (weights, inputs,
seed); noise is off unless asked for.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import torch

from .errors import ContractViolation
from .model import (
    LatentCode,
    ModulatedAutoencoder,
    ModulationPlan,
    PhaseState,
    normalize_latent,
)
from .networks import build_block_specs
from .ops import sample_prior, slerp


@dataclass(frozen=True)
class LayerRange:
    """Inclusive interval of decoder blocks, 1-based from the coarsest."""

    first: int
    last: int

    def __post_init__(self):
        if not 1 <= self.first <= self.last:
            raise ContractViolation(f"invalid layer range {self.first}..{self.last}")

    def contains(self, block: int) -> bool:
        return self.first <= block <= self.last

    def clipped(self, n_blocks: int) -> "LayerRange":
        if self.first > n_blocks:
            raise ContractViolation(f"range {self.first}..{self.last} outside the {n_blocks} active blocks")
        return LayerRange(self.first, min(self.last, n_blocks))


def preset_ranges(model: ModulatedAutoencoder, level: int) -> dict[str, LayerRange]:
    """Named block ranges by output resolution: coarse 4-8 px, intermediate
    16-32 px, fine 64 px and up, plus "all". Only presets with at least one
    active block at the given level are returned."""
    specs = build_block_specs(model.cfg)
    n_active = model.active_blocks(level)
    buckets = {"coarse": [], "intermediate": [], "fine": []}
    for spec in specs[:n_active]:
        res = model.cfg.resolution(spec.level)
        if res <= 8:
            buckets["coarse"].append(spec.index)
        elif res <= 32:
            buckets["intermediate"].append(spec.index)
        else:
            buckets["fine"].append(spec.index)
    out = {name: LayerRange(min(ids), max(ids)) for name, ids in buckets.items() if ids}
    out["all"] = LayerRange(1, n_active)
    return out


def _as_batch(code, model: ModulatedAutoencoder) -> torch.Tensor:
    if isinstance(code, LatentCode):
        return code.values[None]
    t = torch.as_tensor(code, dtype=torch.float32)
    return t[None] if t.dim() == 1 else t


def plan_with_range(model: ModulatedAutoencoder, base, special, rng: LayerRange,
                    n_blocks: int) -> ModulationPlan:
    """Plan where blocks inside rng take `special` and the rest take `base`."""
    rng = rng.clipped(n_blocks)
    segments = []
    if rng.first > 1:
        segments.append(((1, rng.first - 1), base))
    segments.append(((rng.first, rng.last), special))
    if rng.last < n_blocks:
        segments.append(((rng.last + 1, n_blocks), base))
    return ModulationPlan(segments, model.latent_dim)


@torch.no_grad()
def style_mix(model: ModulatedAutoencoder, z_a, z_b, range_b: LayerRange,
              phase: PhaseState, noise=None, use_ema: bool = False) -> torch.Tensor:
    """Decode with range_b blocks driven by z_b and the rest by z_a."""
    model.eval()
    za, zb = _as_batch(z_a, model), _as_batch(z_b, model)
    plan = plan_with_range(model, za, zb, range_b, model.active_blocks(phase.level))
    return model.decode(plan, phase, noise=noise, use_ema=use_ema)


@torch.no_grad()
def conditional_sample(model: ModulatedAutoencoder, z_fixed, fixed_range: LayerRange,
                       n: int, generator: torch.Generator, phase: PhaseState,
                       use_ema: bool = False) -> torch.Tensor:
    """n decodes where fixed_range keeps z_fixed and the complementary blocks
    take fresh prior draws."""
    if n < 1:
        raise ContractViolation("need n >= 1 samples")
    model.eval()
    zf = _as_batch(z_fixed, model).expand(n, -1)
    z_rand = sample_prior(n, model.latent_dim, generator)
    plan = plan_with_range(model, z_rand, zf, fixed_range, model.active_blocks(phase.level))
    return model.decode(plan, phase, noise=None, use_ema=use_ema)


@dataclass
class AttributeVector:
    delta: torch.Tensor      # [latent_dim], unnormalized mean difference
    range: LayerRange
    note: str = ""           # provenance: which exemplars built it
    strength: float = 1.0


@torch.no_grad()
def attribute_vector(model: ModulatedAutoencoder, pos: torch.Tensor, neg: torch.Tensor,
                     layer_range: LayerRange, phase: PhaseState,
                     note: str = "") -> AttributeVector:
    """Mean difference of the encodings of exemplars showing and lacking an
    attribute, remembered together with the block range it should drive."""
    if len(pos) == 0 or len(neg) == 0:
        raise ContractViolation("both exemplar sets must be non-empty")
    model.eval()
    z_pos = model.encode(torch.as_tensor(pos, dtype=torch.float32), phase)
    z_neg = model.encode(torch.as_tensor(neg, dtype=torch.float32), phase)
    return AttributeVector(delta=z_pos.mean(0) - z_neg.mean(0), range=layer_range, note=note)


@torch.no_grad()
def apply_attribute(model: ModulatedAutoencoder, z, attr: AttributeVector,
                    strength: float, phase: PhaseState,
                    use_ema: bool = False) -> torch.Tensor:
    """Shift the code along the attribute direction, renormalize, and decode
    with the shifted code restricted to the attribute's block range."""
    model.eval()
    base = _as_batch(z, model)
    if strength == 0.0:
        edited = base  # exact no-op, not just a renormalized copy
    else:
        edited = normalize_latent(base + strength * attr.delta[None])
    plan = plan_with_range(model, base, edited, attr.range, model.active_blocks(phase.level))
    return model.decode(plan, phase, noise=None, use_ema=use_ema)


@torch.no_grad()
def interpolate_grid(model: ModulatedAutoencoder, corners, steps: int,
                     phase: PhaseState, use_ema: bool = False) -> torch.Tensor:
    """steps x steps image grid: spherical interpolation down the rows, then
    across each row. Corner cells reproduce the corner codes exactly."""
    if steps < 2:
        raise ContractViolation("need at least 2 steps")
    if len(corners) != 4:
        raise ContractViolation("need exactly 4 corner codes (tl, tr, bl, br)")
    model.eval()
    tl, tr, bl, br = [_as_batch(c, model)[0] for c in corners]
    ts = torch.linspace(0.0, 1.0, steps)
    rows = []
    for ti in ts:
        left = slerp(tl, bl, ti)
        right = slerp(tr, br, ti)
        # cells decode one by one so corner cells match the plain
        # reconstruction of the corner codes exactly
        row = [model.decode(slerp(left, right, tj)[None], phase, noise=None,
                            use_ema=use_ema)[0] for tj in ts]
        rows.append(torch.stack(row))
    return torch.stack(rows)  # [rows, cols, 3, H, W]


def save_attribute(path: str | Path, attr: AttributeVector) -> None:
    payload = {
        "delta": [float(v) for v in attr.delta],
        "range": {"first": attr.range.first, "last": attr.range.last},
        "note": attr.note,
        "strength": attr.strength,
    }
    Path(path).write_text(json.dumps(payload, indent=1))


def load_attribute(path: str | Path) -> AttributeVector:
    raw = json.loads(Path(path).read_text())
    return AttributeVector(
        delta=torch.tensor(raw["delta"], dtype=torch.float32),
        range=LayerRange(raw["range"]["first"], raw["range"]["last"]),
        note=raw.get("note", ""),
        strength=float(raw.get("strength", 1.0)),
    )
