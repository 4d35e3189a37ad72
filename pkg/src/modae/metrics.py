"""Quantitative evaluation: Frechet distance on pluggable feature
extractors, perceptual path length over spherical interpolations, test-set
reconstruction scoring, and the synthetic factor-transfer probe.

All model-based metrics run on the averaged decoder with noise disabled.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data import FactorProbe, SyntheticDataset
from .errors import ContractViolation
from .model import ModulatedAutoencoder, ModulationPlan, PhaseState
from .ops import sample_prior, slerp

log = logging.getLogger(__name__)

EIG_TOL = -1e-6  # eigenvalues in [tol, 0) are clipped to zero; beyond is an error


@dataclass(frozen=True)
class FeatureStats:
    mu: np.ndarray     # [d]
    sigma: np.ndarray  # [d, d] symmetric PSD
    n: int

    def __post_init__(self):
        if self.sigma.shape != (self.mu.shape[0], self.mu.shape[0]):
            raise ContractViolation("sigma shape does not match mu")
        if np.abs(self.sigma - self.sigma.T).max() > 1e-8:
            raise ContractViolation("sigma is not symmetric within 1e-8")
        if self.n < self.mu.shape[0]:
            log.warning("feature stats from n=%d < d=%d samples", self.n, self.mu.shape[0])

    @classmethod
    def from_features(cls, feats: np.ndarray) -> "FeatureStats":
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 2:
            raise ContractViolation("need a [n >= 2, d] feature matrix")
        sigma = np.cov(feats, rowvar=False)
        sigma = np.atleast_2d((sigma + sigma.T) / 2.0)
        return cls(mu=feats.mean(axis=0), sigma=sigma, n=feats.shape[0])


def _clipped_sqrt_eigvals(m: np.ndarray, what: str) -> np.ndarray:
    vals = np.linalg.eigvalsh(m)
    if vals.min() < EIG_TOL:
        raise ContractViolation(f"{what} is non-PSD beyond tolerance (min eig {vals.min():.3e})")
    return np.sqrt(np.clip(vals, 0.0, None))


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).

    The cross-term trace is computed via Tr((A^{1/2} B A^{1/2})^{1/2}), which
    only needs symmetric eigendecompositions.
    """
    if a.mu.shape != b.mu.shape:
        raise ContractViolation("feature dimensionalities differ")
    vals_a, vecs_a = np.linalg.eigh(a.sigma)
    if vals_a.min() < EIG_TOL:
        raise ContractViolation(f"sigma_a is non-PSD beyond tolerance (min eig {vals_a.min():.3e})")
    sqrt_a = (vecs_a * np.sqrt(np.clip(vals_a, 0.0, None))) @ vecs_a.T
    inner = sqrt_a @ b.sigma @ sqrt_a
    inner = (inner + inner.T) / 2.0
    tr_cross = _clipped_sqrt_eigvals(inner, "cross covariance").sum()
    diff = a.mu - b.mu
    return float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * tr_cross)


class RandomConvProjector(torch.nn.Module):
    """Fixed random-weight conv feature extractor for desk-scale Frechet
    scores. Seeded and frozen; NOT comparable to published numbers."""

    def __init__(self, feature_dim: int = 64, seed: int = 0):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        def conv(i, o):
            w = torch.randn(o, i, 3, 3, generator=g) / (9 * i) ** 0.5
            c = torch.nn.Conv2d(i, o, 3, stride=2, padding=1, bias=False)
            with torch.no_grad():
                c.weight.copy_(w)
            return c
        self.net = torch.nn.Sequential(
            conv(3, 16), torch.nn.LeakyReLU(0.2),
            conv(16, 32), torch.nn.LeakyReLU(0.2),
            conv(32, feature_dim), torch.nn.LeakyReLU(0.2),
            torch.nn.AdaptiveAvgPool2d(1),
        )
        for p in self.parameters():
            p.requires_grad_(False)

    @torch.no_grad()
    def __call__(self, images: torch.Tensor) -> np.ndarray:
        return self.net(images).flatten(1).cpu().numpy()


def patch_pyramid_distance(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean squared error accumulated over a 2x downsampling pyramid.

    A crude perceptual stand-in: zero iff identical, symmetric, and sensitive
    to structure at several scales. Returns per-sample values for batches.
    """
    if x.dim() == 3:
        x, y = x[None], y[None]
    total = torch.zeros(x.shape[0], dtype=x.dtype, device=x.device)
    levels = 0
    while True:
        total = total + ((x - y) ** 2).mean(dim=(1, 2, 3))
        levels += 1
        if x.shape[-1] <= 8:
            break
        x, y = F.avg_pool2d(x, 2), F.avg_pool2d(y, 2)
    return total / levels


def center_crop_half(images: torch.Tensor) -> torch.Tensor:
    h, w = images.shape[-2:]
    top, left = h // 4, w // 4
    return images[..., top: top + h // 2, left: left + w // 2]


@torch.no_grad()
def ppl(model: ModulatedAutoencoder, phase: PhaseState, metric=patch_pyramid_distance,
        eps: float = 1e-4, n: int = 256, generator: torch.Generator | None = None,
        batch_size: int = 64, use_ema: bool = True, crop: bool = True) -> float:
    """Expected perceptual change per infinitesimal latent step.

    Endpoints drawn from the prior, interpolated on the sphere; each sample
    measures metric(decode(t), decode(t+eps))/eps^2 with noise off. Draws
    happen up front so the estimate is invariant to batch chunking.
    """
    if eps <= 0:
        raise ContractViolation("eps must be positive")
    g = generator or torch.Generator().manual_seed(0)
    z1 = sample_prior(n, model.latent_dim, g)
    z2 = sample_prior(n, model.latent_dim, g)
    t = torch.rand(n, generator=g)
    model.eval()
    vals = []
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        a = slerp(z1[lo:hi], z2[lo:hi], t[lo:hi])
        b = slerp(z1[lo:hi], z2[lo:hi], t[lo:hi] + eps)
        img_a = model.decode(a, phase, noise=None, use_ema=use_ema)
        img_b = model.decode(b, phase, noise=None, use_ema=use_ema)
        if crop:
            img_a, img_b = center_crop_half(img_a), center_crop_half(img_b)
        d = metric(img_a, img_b)
        vals.append(torch.as_tensor(d, dtype=torch.float64).reshape(-1))
    return float(torch.cat(vals).mean() / eps**2)


@torch.no_grad()
def reconstruction_score(model: ModulatedAutoencoder, testset: torch.Tensor,
                         metric=patch_pyramid_distance, phase: PhaseState | None = None,
                         use_ema: bool = True, crop: bool = True,
                         batch_size: int = 64) -> float:
    """Mean metric(x, decode(encode(x))) over a held-out set, center-cropped."""
    if len(testset) == 0:
        raise ContractViolation("empty test set")
    model.eval()
    vals = []
    for lo in range(0, len(testset), batch_size):
        x = torch.as_tensor(testset[lo: lo + batch_size], dtype=torch.float32)
        z = model.encode(x, phase)
        rec = model.decode(z, phase, noise=None, use_ema=use_ema)
        a, b = (center_crop_half(x), center_crop_half(rec)) if crop else (x, rec)
        vals.append(torch.as_tensor(metric(a, b), dtype=torch.float64).reshape(-1))
    return float(torch.cat(vals).mean())


@torch.no_grad()
def factor_transfer_score(model: ModulatedAutoencoder, dataset: SyntheticDataset,
                          split_j: int, probe: FactorProbe, phase: PhaseState,
                          n_pairs: int = 100, generator: torch.Generator | None = None,
                          use_ema: bool = True) -> tuple[float, float]:
    """Mix coarse blocks from A with the rest from B and check the probe
    recovers A's shape and B's color."""
    g = generator or torch.Generator().manual_seed(0)
    model.eval()
    n = len(dataset)
    idx_a = torch.randint(0, n, (n_pairs,), generator=g)
    idx_b = torch.randint(0, n, (n_pairs,), generator=g)
    level_imgs = dataset.at_level(phase.level)
    xa = torch.from_numpy(level_imgs[idx_a.numpy()]).float()
    xb = torch.from_numpy(level_imgs[idx_b.numpy()]).float()
    za = model.encode(xa, phase)
    zb = model.encode(xb, phase)
    n_blocks = model.active_blocks(phase.level)
    plan = ModulationPlan.split(za, zb, split_j, n_blocks, model.latent_dim)
    mixed = model.decode(plan, phase, noise=None, use_ema=use_ema).numpy()
    hit_coarse = hit_fine = 0
    for img, ia, ib in zip(mixed, idx_a.tolist(), idx_b.tolist()):
        got = probe.classify(img)
        hit_coarse += got.shape == dataset.labels[ia].shape
        hit_fine += got.color == dataset.labels[ib].color
    return hit_coarse / n_pairs, hit_fine / n_pairs


def model_checksum(model: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def write_metric_report(path: str | Path, name: str, value: float, n: int,
                        seed: int, checksum: str) -> None:
    record = {"metric": name, "value": value, "n": n, "seed": seed, "model": checksum}
    with Path(path).open("a") as f:
        f.write(json.dumps(record) + "\n")
