"""Model bundle: latent codes, modulation plans, progressive phase state,
the encoder/decoder pair with its averaged evaluation copy."""

from __future__ import annotations

import copy
from dataclasses import dataclass, replace

import torch
import torch.nn as nn

from .config import NetworkConfig, TrainConfig
from .errors import ContractViolation
from .networks import Decoder, Encoder
from .ops import normalize_latent

NORM_TOL = 1e-5


class LatentCode:
    """Unit-norm latent vector; normalization happens at construction."""

    __slots__ = ("values",)

    def __init__(self, values):
        v = torch.as_tensor(values, dtype=torch.float32).reshape(-1)
        if not torch.isfinite(v).all():
            raise ContractViolation("latent code contains non-finite entries")
        norm = v.norm()
        if norm < 1e-12:
            raise ContractViolation("latent code may not be the zero vector")
        self.values = v / norm

    def __len__(self) -> int:
        return self.values.shape[0]

    def numpy(self):
        return self.values.detach().cpu().numpy()

    def tolist(self) -> list[float]:
        return [float(x) for x in self.values]


@dataclass(frozen=True)
class Canvas:
    tensor: torch.Tensor  # [C, H, W] or [B, C, H, W]
    level: int


def canvas_init(channels: int) -> Canvas:
    """The constant all-ones 4x4 tensor every decode starts from."""
    return Canvas(torch.ones(channels, 4, 4), level=0)


@dataclass(frozen=True)
class PhaseState:
    level: int
    fade_alpha: float
    samples_seen: int  # within the current level

    def __post_init__(self):
        if self.level < 0 or not 0.0 <= self.fade_alpha <= 1.0 or self.samples_seen < 0:
            raise ContractViolation(f"invalid phase state {self}")

    @property
    def resolution(self) -> int:
        return 4 * 2**self.level

    @classmethod
    def stable(cls, level: int) -> "PhaseState":
        return cls(level=level, fade_alpha=1.0, samples_seen=0)


def _fade_alpha(level: int, samples: int, fade_budgets) -> float:
    if level == 0:
        return 1.0  # nothing to fade from at the base resolution
    fade = fade_budgets[min(level, len(fade_budgets) - 1)]
    if fade <= 0:
        return 1.0
    return min(1.0, samples / fade)


def grow(phase: PhaseState, schedule: TrainConfig, max_level: int) -> PhaseState:
    """Re-derive (level, fade_alpha) from the sample counter, rolling the
    level over when its budget is exhausted. Terminal level only counts."""
    level, samples = phase.level, phase.samples_seen
    budgets = schedule.phase_budgets
    while level < max_level and samples >= budgets[min(level, len(budgets) - 1)]:
        samples -= budgets[min(level, len(budgets) - 1)]
        level += 1
    return PhaseState(level=level, fade_alpha=_fade_alpha(level, samples, schedule.fade_budgets),
                      samples_seen=samples)


def add_samples(phase: PhaseState, n: int, schedule: TrainConfig, max_level: int) -> PhaseState:
    return grow(replace(phase, samples_seen=phase.samples_seen + n), schedule, max_level)


def phase_from_total(total_samples: int, schedule: TrainConfig, max_level: int) -> PhaseState:
    return grow(PhaseState(0, 1.0, total_samples), schedule, max_level)


def _as_code_batch(code, latent_dim: int) -> torch.Tensor:
    if isinstance(code, LatentCode):
        t = code.values[None, :]
    else:
        t = torch.as_tensor(code)
        if t.dim() == 1:
            t = t[None, :]
    if t.dim() != 2 or t.shape[1] != latent_dim:
        raise ContractViolation(f"code shape {tuple(t.shape)} incompatible with latent_dim {latent_dim}")
    return t


@dataclass(frozen=True)
class Segment:
    first: int  # 1-based inclusive block interval
    last: int
    code: torch.Tensor  # [B, latent_dim]


class ModulationPlan:
    """Assignment of latent codes to contiguous decoder block ranges.

    Segments must partition blocks 1..n exactly: ordered coarsest to finest,
    no gaps, no overlaps.
    """

    def __init__(self, segments: list[tuple[tuple[int, int], torch.Tensor | LatentCode]],
                 latent_dim: int):
        parsed: list[Segment] = []
        for (first, last), code in segments:
            parsed.append(Segment(int(first), int(last), _as_code_batch(code, latent_dim)))
        if not parsed:
            raise ContractViolation("plan needs at least one segment")
        expect = 1
        for seg in parsed:
            if seg.first != expect or seg.last < seg.first:
                raise ContractViolation(
                    f"segments must partition the layers in order; got {seg.first}..{seg.last}, expected start {expect}"
                )
            expect = seg.last + 1
        batches = {seg.code.shape[0] for seg in parsed}
        if len(batches) != 1:
            raise ContractViolation(f"segments carry mismatched batch sizes {sorted(batches)}")
        self.segments = parsed
        self.n_blocks = parsed[-1].last
        self.batch_size = parsed[0].code.shape[0]

    @classmethod
    def single(cls, code, n_blocks: int, latent_dim: int) -> "ModulationPlan":
        return cls([((1, n_blocks), code)], latent_dim)

    @classmethod
    def split(cls, code_a, code_b, j: int, n_blocks: int, latent_dim: int) -> "ModulationPlan":
        """Code A on blocks 1..j, code B on j+1..n. j == n degenerates to A only."""
        if not 1 <= j <= n_blocks:
            raise ContractViolation(f"split point {j} outside 1..{n_blocks}")
        if j == n_blocks:
            return cls([((1, n_blocks), code_a)], latent_dim)
        return cls([((1, j), code_a), ((j + 1, n_blocks), code_b)], latent_dim)

    def codes_per_block(self) -> list[torch.Tensor]:
        out = []
        for seg in self.segments:
            out.extend([seg.code] * (seg.last - seg.first + 1))
        return out

    def to(self, dtype) -> "ModulationPlan":
        plan = object.__new__(ModulationPlan)
        plan.segments = [Segment(s.first, s.last, s.code.to(dtype)) for s in self.segments]
        plan.n_blocks = self.n_blocks
        plan.batch_size = self.batch_size
        return plan


@torch.no_grad()
def ema_update(ema: nn.Module, live: nn.Module, decay: float) -> None:
    """ema <- decay*ema + (1-decay)*live, elementwise over parameters."""
    if not 0.0 <= decay < 1.0:
        raise ContractViolation(f"decay {decay} outside [0, 1)")
    ep, lp = dict(ema.named_parameters()), dict(live.named_parameters())
    if ep.keys() != lp.keys():
        raise ContractViolation("parameter structures do not match")
    for name, p in ep.items():
        if p.shape != lp[name].shape:
            raise ContractViolation(f"shape mismatch for {name}")
        # out-of-place blend: stays a fixed point even if ema aliases live
        p.copy_(decay * p + (1.0 - decay) * lp[name])
    for (_, eb), (_, lb) in zip(ema.named_buffers(), live.named_buffers()):
        eb.copy_(lb)


class ModulatedAutoencoder(nn.Module):
    """Encoder + modulated decoder + frozen averaged decoder for evaluation."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)
        self.ema_decoder = copy.deepcopy(self.decoder)
        for p in self.ema_decoder.parameters():
            p.requires_grad_(False)

    @property
    def latent_dim(self) -> int:
        return self.cfg.latent_dim

    def active_blocks(self, level: int) -> int:
        return self.decoder.active_blocks(level)

    def encode(self, images: torch.Tensor, phase: PhaseState) -> torch.Tensor:
        if images.dim() == 3:
            images = images[None]
        return self.encoder(images, phase.level, phase.fade_alpha)

    def _plan_of(self, code_or_plan, phase: PhaseState) -> ModulationPlan:
        n = self.active_blocks(phase.level)
        if isinstance(code_or_plan, ModulationPlan):
            if code_or_plan.n_blocks != n:
                raise ContractViolation(
                    f"plan covers {code_or_plan.n_blocks} blocks but phase level {phase.level} activates {n}"
                )
            return code_or_plan
        return ModulationPlan.single(code_or_plan, n, self.latent_dim)

    def decode(self, code_or_plan, phase: PhaseState, noise=None,
               use_ema: bool = False) -> torch.Tensor:
        """Decode a code or plan to an image batch in [-1, 1].

        noise: None for deterministic output, a torch.Generator for fresh
        per-layer noise, or an explicit per-block list (shared-noise paths).
        """
        plan = self._plan_of(code_or_plan, phase)
        dec = self.ema_decoder if use_ema else self.decoder
        codes = [c.to(next(dec.parameters()).dtype) for c in plan.codes_per_block()]
        if isinstance(noise, torch.Generator):
            noise = dec.make_noise(plan.batch_size, phase.level, generator=noise)
        return dec(codes, phase.level, phase.fade_alpha, noise)

    def reconstruct(self, images: torch.Tensor, phase: PhaseState, noise=None,
                    use_ema: bool = False) -> torch.Tensor:
        return self.decode(self.encode(images, phase), phase, noise=noise, use_ema=use_ema)

    def update_ema(self, decay: float) -> None:
        ema_update(self.ema_decoder, self.decoder, decay)


def check_unit_norm(z: torch.Tensor, tol: float = NORM_TOL) -> bool:
    return bool(((z.norm(dim=-1) - 1.0).abs() <= tol).all())


__all__ = [
    "Canvas",
    "LatentCode",
    "ModulatedAutoencoder",
    "ModulationPlan",
    "PhaseState",
    "add_samples",
    "canvas_init",
    "check_unit_norm",
    "ema_update",
    "grow",
    "normalize_latent",
    "phase_from_total",
]
