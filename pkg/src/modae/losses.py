"""Training objectives: empirical-moment KL terms with margin, cosine latent
reconstruction, the adaptive robust image distance with its per-pixel shape
map, the layer-disentanglement penalty measured on re-encoded fusion images,
and the invariance terms for known-shared factors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .config import LossWeights
from .errors import ContractViolation
from .model import LatentCode, ModulatedAutoencoder, ModulationPlan, PhaseState

ALPHA_MIN = 0.001
ALPHA_MAX = 1.999
KL_STD_FLOOR = 1e-8


def _f(t: torch.Tensor) -> float:
    return float(t.detach())


def kl_to_standard_normal(latents: torch.Tensor) -> torch.Tensor:
    """KL of the batch's per-dimension Gaussian moment fit against N(0, I).

    sum_j [(s_j^2 + m_j^2 - 1)/2 - log s_j] with population moments over the
    batch dim. Needs at least two samples; a degenerate dimension is floored
    rather than returning inf.
    """
    if latents.dim() != 2:
        raise ContractViolation(f"expected [batch, dim], got {tuple(latents.shape)}")
    if latents.shape[0] < 2:
        raise ContractViolation("batch of at least 2 needed for an empirical std")
    m = latents.mean(dim=0)
    s = latents.std(dim=0, unbiased=False).clamp_min(KL_STD_FLOOR)
    return ((s * s + m * m - 1.0) / 2.0 - torch.log(s)).sum()


def kl_to_sphere_prior(latents: torch.Tensor) -> torch.Tensor:
    """Moment KL for unit-norm codes, measured against the prior that also
    lives on the unit sphere.

    Normalized Gaussian draws have per-dimension std 1/sqrt(d); comparing raw
    moments against N(0, I) therefore carries a large constant offset whose
    gradient drowns every other term. Scaling by sqrt(d) makes the target
    moments (0, 1) exactly achievable on the sphere.
    """
    return kl_to_standard_normal(latents * math.sqrt(latents.shape[-1]))


def cosine_distance(a, b) -> torch.Tensor:
    """1 - a.b on unit vectors; 0 identical, 1 orthogonal, 2 antipodal.

    Accepts single vectors or [B, d] batches (reduced per sample).
    """
    if isinstance(a, LatentCode):
        a = a.values
    if isinstance(b, LatentCode):
        b = b.values
    return 1.0 - (a * b).sum(dim=-1)


def robust_penalty(r: torch.Tensor, alpha, c: float = 1.0) -> torch.Tensor:
    """Elementwise general robust penalty rho(r; alpha, c).

    (|a-2|/a) * [((r/c)^2/|a-2| + 1)^(a/2) - 1], with the exact limit forms
    at alpha=0 (log) and alpha=2 (quadratic). alpha broadcasts against r.
    """
    if not torch.is_tensor(alpha):
        alpha = r.new_tensor(alpha)
    alpha = alpha.to(r.dtype)
    sq = (r / c) ** 2
    # both where-branches are evaluated, so keep the general form finite
    b = (alpha - 2.0).abs().clamp_min(1e-8)
    a_safe = alpha.abs().clamp_min(1e-8)
    general = (b / a_safe) * (torch.pow(sq / b + 1.0, alpha / 2.0) - 1.0)
    quadratic = 0.5 * sq
    log_form = torch.log1p(0.5 * sq)
    return torch.where(alpha == 2.0, quadratic,
                       torch.where(alpha == 0.0, log_form, general))


def robust_distance(x: torch.Tensor, y: torch.Tensor, alpha, c: float = 1.0) -> torch.Tensor:
    """Mean robust penalty of the residual x - y.

    alpha holds one shape parameter per pixel ([H, W]) and broadcasts over
    any leading batch/channel dims of the inputs.
    """
    r = x - y
    if not torch.isfinite(r).all():
        raise ContractViolation("non-finite residuals in robust distance")
    return robust_penalty(r, alpha, c).mean()


_LOG_PARTITION: tuple[torch.Tensor, torch.Tensor] | None = None
_LOG_PARTITION_N = 513


def _rho_scalar(r: float, alpha: float) -> float:
    if alpha == 2.0:
        return 0.5 * r * r
    if alpha == 0.0:
        return math.log1p(0.5 * r * r)
    b = abs(alpha - 2.0)
    return (b / alpha) * ((r * r / b + 1.0) ** (alpha / 2.0) - 1.0)


def _build_log_partition() -> tuple[torch.Tensor, torch.Tensor]:
    from scipy.integrate import quad

    alphas = torch.linspace(0.0, 2.0, _LOG_PARTITION_N, dtype=torch.float64)
    vals = []
    for a in alphas.tolist():
        half, _ = quad(lambda r: math.exp(-_rho_scalar(r, a)), 0.0, math.inf, limit=200)
        vals.append(math.log(2.0 * half))
    return alphas, torch.tensor(vals, dtype=torch.float64)


def robust_log_partition(alpha: torch.Tensor) -> torch.Tensor:
    """log of the normalizer of the distribution induced by the penalty,
    interpolated from a quadrature table over alpha in [0, 2].

    Minimizing the penalty alone always drives alpha to its floor (smaller
    shapes assign less cost to every residual); adding this term makes alpha
    learning a proper likelihood fit.
    """
    global _LOG_PARTITION
    if _LOG_PARTITION is None:
        _LOG_PARTITION = _build_log_partition()
    grid, table = _LOG_PARTITION
    table = table.to(alpha.dtype)
    step = 2.0 / (_LOG_PARTITION_N - 1)
    pos = (alpha.clamp(0.0, 2.0) / step)
    idx = pos.detach().floor().long().clamp(max=_LOG_PARTITION_N - 2)
    frac = pos - idx.to(alpha.dtype)
    return table[idx] * (1.0 - frac) + table[idx + 1] * frac


@dataclass
class AlphaMap:
    """Per-pixel shape parameters for the robust distance at one level."""

    values: torch.Tensor  # [H, W], clamped into (0, 2) while learning
    level: int
    c: float = 1.0

    @classmethod
    def initial(cls, level: int, init: float = 1.0) -> "AlphaMap":
        res = 4 * 2**level
        return cls(values=torch.full((res, res), init), level=level)

    def clamp_(self) -> None:
        with torch.no_grad():
            self.values.clamp_(ALPHA_MIN, ALPHA_MAX)


def grow_alpha(alpha: AlphaMap, max_level: int) -> AlphaMap:
    """Double the map resolution by replicating each entry into its 2x2 tile."""
    if alpha.level >= max_level:
        raise ContractViolation(f"alpha map already at max level {max_level}")
    grown = alpha.values.detach().repeat_interleave(2, dim=0).repeat_interleave(2, dim=1)
    return AlphaMap(values=grown, level=alpha.level + 1, c=alpha.c)


def layer_disentanglement_loss(model: ModulatedAutoencoder, j: int,
                               z_a: torch.Tensor, z_ab_hat: torch.Tensor,
                               noise: list | None = None) -> torch.Tensor:
    """Mean-squared gap between the block-1..j canvases driven by the
    re-encoded fusion code versus the original coarse code.

    Both partial decodes share the same noise tensors, so identical codes
    give exactly zero.
    """
    dec = model.decoder
    if not 1 <= j <= dec.n_blocks:
        raise ContractViolation(f"split {j} outside 1..{dec.n_blocks}")
    batch = z_a.shape[0]
    canvas = dec.canvas(batch, dtype=z_a.dtype, device=z_a.device)
    xi_ab = dec.run_range(canvas, [z_ab_hat] * j, noise, 1, j)
    xi_a = dec.run_range(canvas, [z_a] * j, noise, 1, j)
    return ((xi_ab - xi_a) ** 2).mean()


def invariance_plan(z1, z2, j: int, k: int, n_blocks: int, latent_dim: int) -> ModulationPlan:
    """Blocks j..k take z1, everything else z2."""
    if not (1 <= j <= k <= n_blocks):
        raise ContractViolation(f"invalid split 1..{j - 1} / {j}..{k} / {k + 1}..{n_blocks}")
    segments = []
    if j > 1:
        segments.append(((1, j - 1), z2))
    segments.append(((j, k), z1))
    if k < n_blocks:
        segments.append(((k + 1, n_blocks), z2))
    return ModulationPlan(segments, latent_dim)


def invariance_loss(model: ModulatedAutoencoder, x2: torch.Tensor,
                    z1: torch.Tensor, z2: torch.Tensor, j: int, k: int,
                    phase: PhaseState, alpha: AlphaMap | torch.Tensor,
                    noise=None) -> torch.Tensor:
    """Robust distance between x2 and the decode that swaps z1 into the
    middle block range j..k while z2 drives the rest. With z1 == z2 this is
    the plain reconstruction loss of x2."""
    n = model.active_blocks(phase.level)
    plan = invariance_plan(z1, z2, j, k, n, model.latent_dim)
    out = model.decode(plan, phase, noise=noise)
    values = alpha.values if isinstance(alpha, AlphaMap) else alpha
    c = alpha.c if isinstance(alpha, AlphaMap) else 1.0
    return robust_distance(x2, out, values, c)


def encoder_loss(model: ModulatedAutoencoder, x: torch.Tensor, x_fake: torch.Tensor,
                 weights: LossWeights, alpha: AlphaMap, phase: PhaseState,
                 noise=None) -> tuple[torch.Tensor, dict]:
    """Margin-clamped KL gap pushing real codes toward the prior and
    generated codes away, plus the weighted robust reconstruction term."""
    z_real = model.encode(x, phase)
    kl_real = kl_to_sphere_prior(z_real)
    kl_fake = kl_to_sphere_prior(model.encode(x_fake, phase))
    gap = torch.clamp(kl_real - kl_fake, min=-weights.margin_gap)
    recon_img = model.decode(z_real, phase, noise=noise)
    recon = robust_distance(x, recon_img, alpha.values, alpha.c)
    total = gap + weights.lambda_x * recon
    parts = {
        "kl_real": _f(kl_real),
        "kl_fake": _f(kl_fake),
        "kl_gap_clamped": _f(gap),
        "recon": _f(recon),
    }
    return total, parts


def decoder_loss(model: ModulatedAutoencoder, singles: torch.Tensor,
                 pairs: tuple[torch.Tensor, torch.Tensor], j: int,
                 weights: LossWeights, phase: PhaseState,
                 noise_generator: torch.Generator | None = None) -> tuple[torch.Tensor, dict]:
    """Prior-matching KL on re-encoded samples, cosine latent reconstruction
    on the single-code subset, and the disentanglement term on the mixed
    subset (fusion decode, re-encode, partial-decode comparison).

    When a noise generator is given the draws happen in a fixed order
    (singles first, then mixed), and the mixed fusion noise is reused for
    the second-pass partial decodes.
    """
    device = next(model.parameters()).device
    zero = torch.zeros((), device=device)
    z_hats = []
    d_cos = zero
    l_j = zero
    n_singles = singles.shape[0] if singles is not None else 0
    z_a, z_b = pairs if pairs is not None else (None, None)
    n_pairs = z_a.shape[0] if z_a is not None else 0

    if n_singles:
        noise_s = None
        if noise_generator is not None:
            noise_s = model.decoder.make_noise(n_singles, phase.level, generator=noise_generator)
        x_s = model.decode(singles, phase, noise=noise_s)
        z_s = model.encode(x_s, phase)
        z_hats.append(z_s)
        d_cos = cosine_distance(singles, z_s).mean()

    if n_pairs:
        n_blocks = model.active_blocks(phase.level)
        noise_m = None
        if noise_generator is not None:
            noise_m = model.decoder.make_noise(n_pairs, phase.level, generator=noise_generator)
        plan = ModulationPlan.split(z_a, z_b, j, n_blocks, model.latent_dim)
        x_m = model.decode(plan, phase, noise=noise_m)
        z_ab = model.encode(x_m, phase)
        z_hats.append(z_ab)
        l_j = layer_disentanglement_loss(model, j, z_a, z_ab,
                                         noise=None if noise_m is None else noise_m[:j])

    if not z_hats:
        raise ContractViolation("decoder loss needs a non-empty batch")
    kl = kl_to_sphere_prior(torch.cat(z_hats, dim=0))
    total = kl + weights.lambda_z * d_cos + l_j
    parts = {
        "kl_fake": _f(kl),
        "d_cos": _f(d_cos),
        "l_j": _f(l_j),
        "j": j,
        "n_singles": n_singles,
        "n_pairs": n_pairs,
    }
    return total, parts
