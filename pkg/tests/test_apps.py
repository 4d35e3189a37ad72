import pytest
import torch

from modae import apps
from modae.errors import ContractViolation
from modae.losses import layer_disentanglement_loss
from modae.model import ModulationPlan, PhaseState


@pytest.fixture
def presets(small_model):
    return apps.preset_ranges(small_model, 3)


class TestPresets:
    def test_resolution_buckets(self, presets):
        # blocks: 1->4px, 2->8px, 3->16px, 4->32px
        assert presets["coarse"] == apps.LayerRange(1, 2)
        assert presets["intermediate"] == apps.LayerRange(3, 4)
        assert presets["all"] == apps.LayerRange(1, 4)
        assert "fine" not in presets  # no 64px blocks at this scale

    def test_clipped_to_active(self, small_model):
        at_level1 = apps.preset_ranges(small_model, 1)
        assert at_level1["all"] == apps.LayerRange(1, 2)


class TestStyleMix:
    def test_same_code_is_plain_decode(self, small_model, phase3, unit_codes, presets):
        mixed = apps.style_mix(small_model, unit_codes[0], unit_codes[0],
                               presets["coarse"], phase3)
        with torch.no_grad():
            plain = small_model.decode(unit_codes[0:1], phase3)
        assert torch.equal(mixed, plain)

    def test_full_range_is_decode_b(self, small_model, phase3, unit_codes, presets):
        mixed = apps.style_mix(small_model, unit_codes[0], unit_codes[1],
                               presets["all"], phase3)
        with torch.no_grad():
            plain_b = small_model.decode(unit_codes[1:2], phase3)
        assert torch.equal(mixed, plain_b)

    def test_matches_fusion_decode_of_disentanglement_path(self, small_model, phase3,
                                                           unit_codes):
        """style_mix with a trailing range equals the split-plan decode used
        inside the disentanglement term."""
        j = 2
        n = small_model.active_blocks(3)
        za, zb = unit_codes[0:1], unit_codes[1:2]
        mixed = apps.style_mix(small_model, za, zb, apps.LayerRange(j + 1, n), phase3)
        with torch.no_grad():
            fused = small_model.decode(ModulationPlan.split(za, zb, j, n, 16), phase3)
        assert torch.allclose(mixed, fused, atol=1e-6)

    def test_invalid_range(self, small_model, phase3, unit_codes):
        with pytest.raises(ContractViolation):
            apps.style_mix(small_model, unit_codes[0], unit_codes[1],
                           apps.LayerRange(9, 12), phase3)


class TestConditionalSample:
    def test_all_fixed_gives_identical_rows(self, small_model, phase3, unit_codes, presets):
        g = torch.Generator().manual_seed(0)
        out = apps.conditional_sample(small_model, unit_codes[0], presets["all"], 5, g, phase3)
        for i in range(1, 5):
            assert torch.equal(out[i], out[0])
        with torch.no_grad():
            plain = small_model.decode(unit_codes[0:1], phase3)
        assert torch.allclose(out[0], plain[0], atol=1e-4)

    def test_seed_determinism(self, small_model, phase3, unit_codes, presets):
        a = apps.conditional_sample(small_model, unit_codes[0], presets["coarse"], 3,
                                    torch.Generator().manual_seed(9), phase3)
        b = apps.conditional_sample(small_model, unit_codes[0], presets["coarse"], 3,
                                    torch.Generator().manual_seed(9), phase3)
        assert torch.equal(a, b)

    def test_rejects_zero(self, small_model, phase3, unit_codes, presets):
        with pytest.raises(ContractViolation):
            apps.conditional_sample(small_model, unit_codes[0], presets["all"], 0,
                                    torch.Generator(), phase3)


class TestAttributes:
    def test_equal_sets_zero_delta(self, small_model, phase3, presets):
        x = torch.rand(4, 3, 32, 32) * 2 - 1
        small_model.eval()
        attr = apps.attribute_vector(small_model, x, x, presets["coarse"], phase3)
        assert torch.allclose(attr.delta, torch.zeros(16), atol=1e-6)

    def test_swap_negates(self, small_model, phase3, presets):
        small_model.eval()
        pos = torch.rand(4, 3, 32, 32) * 2 - 1
        neg = torch.rand(4, 3, 32, 32) * 2 - 1
        a = apps.attribute_vector(small_model, pos, neg, presets["coarse"], phase3)
        b = apps.attribute_vector(small_model, neg, pos, presets["coarse"], phase3)
        assert torch.allclose(a.delta, -b.delta, atol=1e-6)

    def test_empty_set_rejected(self, small_model, phase3, presets):
        with pytest.raises(ContractViolation):
            apps.attribute_vector(small_model, torch.zeros(0, 3, 32, 32),
                                  torch.rand(2, 3, 32, 32), presets["coarse"], phase3)

    def test_strength_zero_is_plain_decode(self, small_model, phase3, unit_codes, presets):
        attr = apps.AttributeVector(delta=torch.randn(16), range=presets["coarse"])
        out = apps.apply_attribute(small_model, unit_codes[0], attr, 0.0, phase3)
        with torch.no_grad():
            plain = small_model.decode(unit_codes[0:1], phase3)
        assert torch.equal(out, plain)

    def test_full_range_equals_decode_of_edited(self, small_model, phase3, unit_codes, presets):
        attr = apps.AttributeVector(delta=torch.randn(16), range=presets["all"])
        strength = 0.7
        out = apps.apply_attribute(small_model, unit_codes[0], attr, strength, phase3)
        from modae.ops import normalize_latent
        edited = normalize_latent(unit_codes[0:1] + strength * attr.delta[None])
        with torch.no_grad():
            plain = small_model.decode(edited, phase3)
        assert torch.allclose(out, plain, atol=1e-6)

    def test_locality_of_restricted_edit(self, small_model, phase3, unit_codes):
        """An edit restricted to later blocks leaves the earlier canvases
        untouched."""
        n = small_model.active_blocks(3)
        rng = apps.LayerRange(3, n)
        attr = apps.AttributeVector(delta=torch.randn(16), range=rng)
        base = unit_codes[0:1]
        from modae.ops import normalize_latent
        edited = normalize_latent(base + 1.0 * attr.delta[None])
        dec = small_model.decoder
        rec_base, rec_edit = [], []
        with torch.no_grad():
            canvas = dec.canvas(1)
            dec.run_range(canvas, [base] * n, None, 1, n, record=rec_base)
            codes = [base] * 2 + [edited] * (n - 2)
            dec.run_range(canvas, codes, None, 1, n, record=rec_edit)
        for i in range(2):
            assert torch.equal(rec_base[i], rec_edit[i])

    def test_save_load_round_trip(self, tmp_path, presets):
        attr = apps.AttributeVector(delta=torch.randn(16), range=presets["coarse"],
                                    note="exemplars 1..4")
        apps.save_attribute(tmp_path / "a.json", attr)
        back = apps.load_attribute(tmp_path / "a.json")
        assert torch.allclose(back.delta, attr.delta, atol=1e-6)
        assert back.range == attr.range and back.note == attr.note


class TestInterpolateGrid:
    def test_corners_exact(self, small_model, phase3, unit_codes):
        corners = [unit_codes[i] for i in range(4)]
        grid = apps.interpolate_grid(small_model, corners, 3, phase3)
        with torch.no_grad():
            for (r, c), z in zip([(0, 0), (0, 2), (2, 0), (2, 2)], corners):
                assert torch.equal(grid[r, c], small_model.decode(z[None], phase3)[0])

    def test_equal_corners_constant_grid(self, small_model, phase3, unit_codes):
        grid = apps.interpolate_grid(small_model, [unit_codes[0]] * 4, 2, phase3)
        flat = grid.reshape(-1, *grid.shape[2:])
        for cell in flat[1:]:
            assert torch.equal(cell, flat[0])

    def test_needs_two_steps(self, small_model, phase3, unit_codes):
        with pytest.raises(ContractViolation):
            apps.interpolate_grid(small_model, [unit_codes[0]] * 4, 1, phase3)

    def test_repeatable(self, small_model, phase3, unit_codes):
        a = apps.interpolate_grid(small_model, [unit_codes[i] for i in range(4)], 2, phase3)
        b = apps.interpolate_grid(small_model, [unit_codes[i] for i in range(4)], 2, phase3)
        assert torch.equal(a, b)
