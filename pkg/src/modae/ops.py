"""Low-level tensor operations: instance renormalization, latent geometry,
smoothing filters and the scaled conv/linear layers used by the decoder."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

STD_EPS = 1e-8  # floor for per-map std; degenerate constant maps map to the target mean


def adain(x: torch.Tensor, m, s, eps: float = STD_EPS) -> torch.Tensor:
    """Renormalize each feature map of x to mean m and std |s|.

    x is [..., H, W]; m and s broadcast against the leading dims (scalars for
    a single map, [B, C, 1, 1] for a batch). Statistics are population
    (biased) moments over H and W, computed per map. s may be negative; no
    clamping is applied to the targets.
    """
    if not torch.is_tensor(m):
        m = x.new_tensor(m)
    if not torch.is_tensor(s):
        s = x.new_tensor(s)
    mu = x.mean(dim=(-2, -1), keepdim=True)
    var = x.var(dim=(-2, -1), keepdim=True, unbiased=False)
    # clamp variance (not std) so the gradient stays finite on constant maps
    sigma = var.clamp_min(eps * eps).sqrt()
    return s * (x - mu) / sigma + m


def normalize_latent(z: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Project latent vectors onto the unit hypersphere."""
    return z / z.norm(dim=dim, keepdim=True).clamp_min(1e-12)


def sample_prior(n: int, latent_dim: int, generator: torch.Generator | None = None,
                 dtype=torch.float32) -> torch.Tensor:
    """Draw n unit-normalized Gaussian latent codes."""
    z = torch.randn(n, latent_dim, generator=generator, dtype=dtype)
    return normalize_latent(z)


def slerp(a: torch.Tensor, b: torch.Tensor, t) -> torch.Tensor:
    """Spherical interpolation between unit vectors along the last dim.

    Exact at the endpoints: slerp(a, b, 0) is a bit-for-bit, likewise t=1.
    Falls back to normalized lerp for nearly parallel inputs.
    """
    if not torch.is_tensor(t):
        t = a.new_tensor(t)
    t = t.reshape(t.shape + (1,) * (a.dim() - t.dim()))
    dot = (a * b).sum(dim=-1, keepdim=True).clamp(-1.0, 1.0)
    omega = torch.acos(dot)
    sin_omega = torch.sin(omega)
    safe = sin_omega.abs() > 1e-7
    sin_safe = torch.where(safe, sin_omega, torch.ones_like(sin_omega))
    ca = torch.sin((1.0 - t) * omega) / sin_safe
    cb = torch.sin(t * omega) / sin_safe
    out = ca * a + cb * b
    lerp = normalize_latent((1.0 - t) * a + t * b)
    return torch.where(safe, out, lerp)


_BINOMIAL_1D = torch.tensor([1.0, 2.0, 1.0])


def binomial_kernel(dtype=torch.float32) -> torch.Tensor:
    """Separable [1,2,1] x [1,2,1] / 16 low-pass kernel."""
    k = _BINOMIAL_1D[:, None] * _BINOMIAL_1D[None, :]
    return (k / k.sum()).to(dtype)


def binomial_filter(x: torch.Tensor, kernel: torch.Tensor | None = None) -> torch.Tensor:
    """Depthwise smoothing of [B, C, H, W] with the binomial kernel."""
    c = x.shape[1]
    if kernel is None:
        kernel = binomial_kernel(x.dtype)
    weight = kernel.to(device=x.device, dtype=x.dtype).expand(c, 1, 3, 3)
    return F.conv2d(x, weight, padding=1, groups=c)


def upsample2x(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="nearest")


def downsample2x(x: torch.Tensor) -> torch.Tensor:
    return F.avg_pool2d(x, 2)


class EqualizedConv2d(nn.Module):
    """Conv layer with weights kept at N(0,1) and He-scaled at runtime."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, padding: int = 0):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.scale = math.sqrt(2.0 / (in_ch * kernel * kernel))
        self.padding = padding

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.conv2d(x, self.weight * self.scale, self.bias, padding=self.padding)


class ModulationMap(nn.Module):
    """Linear map from a latent code to one (mean, scale) pair per channel.

    Biases start at (m=0, s=1) so an untrained map is a pass-through; weights
    are scaled so s stays near 1 for unit-norm inputs at init.
    """

    def __init__(self, latent_dim: int, channels: int):
        super().__init__()
        self.channels = channels
        self.linear = nn.Linear(latent_dim, 2 * channels)
        nn.init.normal_(self.linear.weight, std=1.0 / math.sqrt(latent_dim))
        with torch.no_grad():
            self.linear.bias.zero_()
            self.linear.bias[channels:] = 1.0

    def forward(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        out = self.linear(z)
        m, s = out[:, : self.channels], out[:, self.channels:]
        return m[:, :, None, None], s[:, :, None, None]
