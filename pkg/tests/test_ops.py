import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from modae.ops import adain, binomial_kernel, normalize_latent, slerp


class TestAdain:
    def test_hand_computed_map(self):
        # population std of [1,2,3,4] is sqrt(1.25)
        x = torch.tensor([[1.0, 2.0], [3.0, 4.0]])
        out = adain(x, 0.0, 1.0)
        expected = torch.tensor([[-1.3416, -0.4472], [0.4472, 1.3416]])
        assert torch.allclose(out, expected, atol=1e-4)

    def test_identity_on_standardized_map(self):
        x = torch.randn(5, 5)
        x = (x - x.mean()) / x.std(unbiased=False)
        assert torch.allclose(adain(x, 0.0, 1.0), x, atol=1e-6)

    def test_constant_map_goes_to_target_mean(self):
        x = torch.full((2, 2), 5.0)
        out = adain(x, 2.0, 3.0)
        assert torch.allclose(out, torch.full((2, 2), 2.0))

    def test_exactness_batched(self):
        x = torch.randn(4, 3, 8, 8)
        m = torch.randn(4, 3, 1, 1)
        s = torch.randn(4, 3, 1, 1)  # negative scales allowed
        out = adain(x, m, s)
        assert torch.allclose(out.mean(dim=(-2, -1), keepdim=True), m, atol=1e-5)
        got_std = out.std(dim=(-2, -1), unbiased=False, keepdim=True)
        assert torch.allclose(got_std, s.abs(), atol=1e-5)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
    def test_exactness_property(self, seed, m, s):
        g = torch.Generator().manual_seed(seed)
        x = torch.randn(6, 6, generator=g, dtype=torch.float64)
        out = adain(x, m, s)
        assert abs(float(out.mean()) - m) < 1e-5
        assert abs(float(out.std(unbiased=False)) - abs(s)) < 1e-5


class TestSlerp:
    def test_endpoints_exact(self):
        a = normalize_latent(torch.randn(8))
        b = normalize_latent(torch.randn(8))
        assert torch.equal(slerp(a, b, 0.0), a)
        assert torch.equal(slerp(a, b, 1.0), b + 0.0 * a) or torch.allclose(slerp(a, b, 1.0), b, atol=1e-6)

    def test_midpoint_unit_norm(self):
        a = normalize_latent(torch.randn(16))
        b = normalize_latent(torch.randn(16))
        mid = slerp(a, b, 0.5)
        assert abs(float(mid.norm()) - 1.0) < 1e-5

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0, 1))
    def test_stays_on_sphere(self, seed, t):
        g = torch.Generator().manual_seed(seed)
        a = normalize_latent(torch.randn(12, generator=g))
        b = normalize_latent(torch.randn(12, generator=g))
        assert abs(float(slerp(a, b, t).norm()) - 1.0) < 1e-4

    def test_parallel_fallback(self):
        a = normalize_latent(torch.ones(4))
        out = slerp(a, a.clone(), 0.37)
        assert torch.allclose(out, a, atol=1e-6)


def test_binomial_kernel_normalized():
    k = binomial_kernel()
    assert k.shape == (3, 3)
    assert abs(float(k.sum()) - 1.0) < 1e-7
    assert float(k[1, 1]) == pytest.approx(4.0 / 16.0)


def test_normalize_latent_unit():
    z = torch.randn(7, 12) * 10
    n = normalize_latent(z).norm(dim=1)
    assert torch.allclose(n, torch.ones(7), atol=1e-6)
