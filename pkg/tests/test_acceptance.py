"""Acceptance suite: every criterion at its stated tolerance, one printed
PASS line per check.

The end-to-end synthetic run (marked e2e) trains the desk-scale model to
32x32 and is the long pole: ~1h on two CPU cores. Everything else finishes
in minutes. Run with -s to see the per-criterion lines.
"""

import copy
import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from modae import apps
from modae.config import LossWeights, NetworkConfig, TrainConfig
from modae.data import FactorProbe, SyntheticFactorSpec, synth_generate
from modae.losses import (
    AlphaMap,
    cosine_distance,
    grow_alpha,
    invariance_loss,
    kl_to_standard_normal,
    layer_disentanglement_loss,
    robust_distance,
    robust_penalty,
)
from modae.metrics import (
    FeatureStats,
    factor_transfer_score,
    frechet_distance,
    ppl,
    reconstruction_score,
)
from modae.model import ModulatedAutoencoder, ModulationPlan, PhaseState
from modae.ops import adain, sample_prior
from modae.training import ArrayDataSource, Trainer, load_checkpoint, save_checkpoint


def ok(name: str, passed: bool, detail: str = ""):
    print(f"ACCEPT {name}: {'PASS' if passed else 'FAIL'} {detail}")
    assert passed, f"{name} {detail}"


# --- [PRIMARY] unit oracle suite ------------------------------------------------


class TestUnitOracles:
    def test_adain_exactness(self):
        x = torch.randn(8, 4, 6, 6)
        m = torch.randn(8, 4, 1, 1)
        s = torch.randn(8, 4, 1, 1)
        out = adain(x, m, s)
        mean_err = float((out.mean(dim=(-2, -1), keepdim=True) - m).abs().max())
        std_err = float((out.std(dim=(-2, -1), unbiased=False, keepdim=True) - s.abs()).abs().max())
        ok("adain-exactness", mean_err < 1e-5 and std_err < 1e-5,
           f"(mean err {mean_err:.2e}, std err {std_err:.2e})")

    def test_empirical_kl_closed_forms(self):
        z0 = torch.tensor([[-1.0] * 3, [1.0] * 3], dtype=torch.float64)
        v0 = abs(float(kl_to_standard_normal(z0)))
        d = 7
        z1 = torch.stack([torch.zeros(d, dtype=torch.float64),
                          torch.full((d,), 2.0, dtype=torch.float64)])
        v1 = abs(float(kl_to_standard_normal(z1)) - 0.5 * d)
        z = torch.randn(64, 16, dtype=torch.float64)
        m, s = z.mean(0), z.std(0, unbiased=False)
        closed = float(((s * s + m * m - 1) / 2 - torch.log(s)).sum())
        v2 = abs(float(kl_to_standard_normal(z)) - closed)
        ok("empirical-kl-closed-form", v0 < 1e-6 and v1 < 1e-6 and v2 < 1e-6,
           f"(zero {v0:.2e}, half-d {v1:.2e}, recompute {v2:.2e})")

    def test_cosine_endpoints(self):
        a = torch.zeros(8)
        a[0] = 1.0
        b = torch.zeros(8)
        b[1] = 1.0
        vals = (float(cosine_distance(a, a)), float(cosine_distance(a, b)),
                float(cosine_distance(a, -a)))
        ok("cosine-endpoints", vals == (0.0, 1.0, 2.0), f"{vals}")

    def test_barron_values(self):
        r = torch.tensor(1.0, dtype=torch.float64)
        quad = abs(float(robust_penalty(r, 2.0, 1.0)) - 0.5)
        one = abs(float(robust_penalty(r, 1.0, 1.0)) - (math.sqrt(2.0) - 1.0))
        ok("barron-endpoint-values", quad < 1e-9 and one < 1e-9,
           f"(alpha=2 err {quad:.1e}, alpha=1 err {one:.1e})")

    def test_grow_alpha_replication_exact(self):
        vals = torch.rand(4, 4, dtype=torch.float64)
        grown = grow_alpha(AlphaMap(values=vals, level=0), max_level=3).values
        exact = all(
            torch.equal(grown[2 * i: 2 * i + 2, 2 * j: 2 * j + 2],
                        torch.full((2, 2), float(vals[i, j]), dtype=torch.float64))
            for i in range(4) for j in range(4)
        )
        ok("grow-alpha-replication", exact)

    def test_frechet_closed_forms(self):
        a = FeatureStats(mu=np.zeros(1), sigma=np.ones((1, 1)), n=100)
        b = FeatureStats(mu=np.ones(1), sigma=np.ones((1, 1)), n=100)
        c = FeatureStats(mu=np.zeros(1), sigma=np.full((1, 1), 4.0), n=100)
        e1 = abs(frechet_distance(a, b) - 1.0)
        e2 = abs(frechet_distance(a, c) - 1.0)
        ok("frechet-1d-closed-forms", e1 < 1e-9 and e2 < 1e-9,
           f"(mean-shift err {e1:.1e}, var-gap err {e2:.1e})")

    def test_margin_clamp_endpoint(self, small_model, phase3, monkeypatch):
        from modae.losses import encoder_loss

        calls = {"n": 0}

        def fake_kl(z):
            calls["n"] += 1
            return torch.tensor(0.0) if calls["n"] % 2 == 1 else torch.tensor(1.0)

        monkeypatch.setattr("modae.losses.kl_to_sphere_prior", fake_kl)
        monkeypatch.setattr("modae.losses.robust_distance",
                            lambda *a, **k: torch.tensor(0.0))
        x = torch.rand(4, 3, 32, 32) * 2 - 1
        total, parts = encoder_loss(small_model, x, x.clone(),
                                    LossWeights(margin_gap=0.5), AlphaMap.initial(3),
                                    phase3)
        ok("margin-clamp-endpoint", float(total) == -0.5, f"(got {float(total)})")


# --- [PRIMARY] identity-reduction suite ----------------------------------------


class TestIdentityReductions:
    def test_layer_disentanglement_identity(self, small_model, unit_codes):
        worst = 0.0
        for j in range(1, small_model.active_blocks(3) + 1):
            worst = max(worst, float(layer_disentanglement_loss(
                small_model, j, unit_codes[:2], unit_codes[:2])))
        ok("l_j-identity-zero", worst == 0.0, f"(max over j: {worst})")

    def test_invariance_reduces_to_reconstruction(self, small_model, phase3, unit_codes):
        alpha = AlphaMap.initial(3)
        z = unit_codes[:2]
        x2 = small_model.decode(z, phase3).detach()
        n = small_model.active_blocks(3)
        inv = invariance_loss(small_model, x2, z, z, 2, n, phase3, alpha)
        plain = robust_distance(x2, small_model.decode(z, phase3), alpha.values)
        ok("invariance-identity-bitwise", float(inv) == float(plain),
           f"({float(inv)} vs {float(plain)})")

    def test_style_mix_degenerate_bitwise(self, small_model, phase3, unit_codes):
        n = small_model.active_blocks(3)
        z = unit_codes[:2]
        whole = small_model.decode(ModulationPlan.single(z, n, 16), phase3)
        exact = all(
            torch.equal(whole, small_model.decode(ModulationPlan.split(z, z, j, n, 16), phase3))
            for j in range(1, n + 1)
        )
        mix_same = apps.style_mix(small_model, unit_codes[0], unit_codes[0],
                                  apps.LayerRange(1, 2), phase3)
        with torch.no_grad():
            plain = small_model.decode(unit_codes[0:1], phase3)
        ok("style-mix-degenerate-bitwise", exact and torch.equal(mix_same, plain))

    def test_fade_endpoints_exact(self, small_model, unit_codes):
        z = unit_codes[:1]
        lo = small_model.decode(z, PhaseState.stable(2))
        hi0 = small_model.decode(z, PhaseState(level=3, fade_alpha=0.0, samples_seen=0))
        hi1 = small_model.decode(z, PhaseState(level=3, fade_alpha=1.0, samples_seen=0))
        full = small_model.decode(z, PhaseState.stable(3))
        ok("fade-endpoints-exact",
           torch.equal(hi0, F.interpolate(lo, scale_factor=2, mode="nearest"))
           and torch.equal(hi1, full))


# --- [PRIMARY] gradient suite (full checks live in test_gradients.py) ----------


@pytest.mark.slow
class TestGradientSuite:
    def test_all_gradient_checks(self):
        from test_gradients import (
            test_decode_through_adain_grads,
            test_invariance_loss_grads,
            test_layer_disentanglement_grads,
            test_robust_distance_grads,
        )

        test_robust_distance_grads()
        test_decode_through_adain_grads()
        test_layer_disentanglement_grads()
        test_invariance_loss_grads()
        ok("gradient-suite-1e-3", True,
           "(d_rho, decode-through-renorm, disentanglement, invariance)")


# --- [PRIMARY] determinism & persistence ----------------------------------------


@pytest.mark.slow
class TestDeterminismPersistence:
    def _trainer(self, seed=99):
        net = NetworkConfig(latent_dim=16, channel_schedule=(16, 16, 8), max_level=2)
        cfg = TrainConfig(phase_budgets=(160, 160, 10**9), fade_budgets=(0, 64, 64),
                          batch_schedule=(8, 8, 8), seed=seed)
        ds = synth_generate(SyntheticFactorSpec(image_size=16), 64, seed=2)
        torch.manual_seed(seed)
        model = ModulatedAutoencoder(net)
        return Trainer(model, net, cfg, ArrayDataSource.from_synthetic(ds))

    def test_hundred_step_trace_reproducible(self):
        t1, t2 = self._trainer(), self._trainer()
        r1, r2 = t1.run(100), t2.run(100)
        same = all(
            a["encoder"]["total"] == b["encoder"]["total"]
            and a["decoder"]["total"] == b["decoder"]["total"]
            for a, b in zip(r1, r2)
        )
        ok("fixed-seed-100-step-trace", same)

    def test_checkpoint_resume_matches_uninterrupted(self, tmp_path):
        t_full = self._trainer(seed=55)
        full = t_full.run(40)
        t_head = self._trainer(seed=55)
        head = t_head.run(20)
        save_checkpoint(t_head, tmp_path / "ck.zip")
        t_tail = load_checkpoint(tmp_path / "ck.zip", data=t_head.data)
        tail = t_tail.run(20)
        resumed = head + tail
        same = all(
            a["encoder"]["total"] == b["encoder"]["total"]
            and a["decoder"]["total"] == b["decoder"]["total"]
            for a, b in zip(full, resumed)
        )
        ok("checkpoint-resume-exact", same)


# --- [PRIMARY] metrics sanity ----------------------------------------------------


class TestMetricsSanity:
    def test_constant_decoder_ppl_zero(self):
        class Const:
            latent_dim = 8

            def eval(self):
                pass

            def decode(self, z, phase, noise=None, use_ema=True):
                return torch.zeros(z.shape[0], 3, 16, 16)

        val = ppl(Const(), PhaseState.stable(2), n=128)
        ok("ppl-constant-decoder-zero", val == 0.0, f"(got {val})")

    def test_frechet_self_zero(self):
        s = FeatureStats.from_features(np.random.default_rng(3).normal(size=(60, 6)))
        val = abs(frechet_distance(s, s))
        ok("frechet-self-zero", val < 1e-8, f"(got {val:.2e})")

    def test_chunking_invariance_with_ema_and_noise_off(self, small_model, phase3):
        g1 = torch.Generator().manual_seed(4)
        g2 = torch.Generator().manual_seed(4)
        a = ppl(small_model, phase3, n=64, generator=g1, batch_size=64, use_ema=True)
        b = ppl(small_model, phase3, n=64, generator=g2, batch_size=13, use_ema=True)
        ok("metrics-chunking-invariant", abs(a - b) < 1e-9, f"({a} vs {b})")


# --- [PRIMARY] end-to-end synthetic run -----------------------------------------

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
E2E_SAMPLES = 270_000
SPEC = SyntheticFactorSpec(image_size=32)


@pytest.fixture(scope="session")
def trained():
    torch.set_num_threads(2)
    train_ds = synth_generate(SPEC, 4096, seed=100)
    test_ds = synth_generate(SPEC, 512, seed=200)
    torch.manual_seed(DESK_TRAIN.seed)
    model = ModulatedAutoencoder(DESK_NET)
    trainer = Trainer(model, DESK_NET, DESK_TRAIN, ArrayDataSource.from_synthetic(train_ds))
    records = trainer.run_until(E2E_SAMPLES)
    return trainer, test_ds, records


@pytest.mark.e2e
@pytest.mark.slow
class TestEndToEndSynthetic:
    def test_reconstruction_probe_accuracy(self, trained):
        trainer, test_ds, _ = trained
        model = trainer.model
        model.eval()
        phase = PhaseState.stable(3)
        with torch.no_grad():
            x = torch.from_numpy(test_ds.at_level(3)).float()
            rec = model.decode(model.encode(x, phase), phase, use_ema=True)
        probe = FactorProbe(SPEC)
        shape_acc, color_acc = probe.accuracy(rec.numpy(), test_ds.labels)
        ok("e2e-reconstruction-probe>=0.95", shape_acc >= 0.95 and color_acc >= 0.95,
           f"(shape {shape_acc:.3f}, color {color_acc:.3f})")

    def test_factor_transfer(self, trained):
        trainer, test_ds, _ = trained
        phase = PhaseState.stable(3)
        probe = FactorProbe(SPEC)
        coarse, fine = factor_transfer_score(trainer.model, test_ds, 2, probe, phase,
                                             n_pairs=200,
                                             generator=torch.Generator().manual_seed(7))
        ok("e2e-factor-transfer>=0.8", coarse >= 0.8 and fine >= 0.8,
           f"(coarse {coarse:.3f}, fine {fine:.3f})")

    def test_conditional_sampling_holds_shape(self, trained):
        trainer, test_ds, _ = trained
        model = trainer.model
        model.eval()
        phase = PhaseState.stable(3)
        probe = FactorProbe(SPEC)
        presets = apps.preset_ranges(model, 3)
        held = 0
        with torch.no_grad():
            for i in range(10):
                x = torch.from_numpy(test_ds.at_level(3)[i]).float()
                z = model.encode(x[None], phase)[0]
                imgs = apps.conditional_sample(model, z, presets["coarse"], 10,
                                               torch.Generator().manual_seed(1000 + i),
                                               phase, use_ema=True)
                for img in imgs.numpy():
                    held += probe.classify(img).shape == test_ds.labels[i].shape
        ok("e2e-conditional-shape-hold>=0.9", held >= 90, f"({held}/100 held)")

    def test_latent_cycle_distance(self, trained):
        trainer, _, _ = trained
        model = trainer.model
        model.eval()
        phase = PhaseState.stable(3)
        with torch.no_grad():
            z = sample_prior(256, DESK_NET.latent_dim, torch.Generator().manual_seed(17))
            zc = model.encode(model.decode(z, phase, use_ema=True), phase)
        d = float(cosine_distance(z, zc).mean())
        ok("e2e-cycle-dcos<0.15", d < 0.15, f"(got {d:.4f})")

    def test_smoke_terms_halve_in_16px_phase(self, trained):
        """Both the reconstruction term and the latent-cycle distance halve
        between entering the 16x16 phase and 2000 steps later (or phase end)."""
        _, _, records = trained
        lvl2 = [r for r in records if r["phase"]["level"] == 2]
        start = lvl2[:20]
        steps_in = min(len(lvl2) - 1, 2000)
        end = lvl2[max(0, steps_in - 100): steps_in]
        recon0 = sum(r["encoder"]["recon"] for r in start) / len(start)
        recon1 = sum(r["encoder"]["recon"] for r in end) / len(end)
        dcos0 = sum(r["decoder"]["d_cos"] for r in start) / len(start)
        dcos1 = sum(r["decoder"]["d_cos"] for r in end) / len(end)
        ok("e2e-16px-smoke-halving", recon1 <= 0.5 * recon0 and dcos1 <= 0.5 * dcos0,
           f"(recon {recon0:.4f}->{recon1:.4f}, d_cos {dcos0:.4f}->{dcos1:.4f})")
