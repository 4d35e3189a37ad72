import base64
import io
import json
import threading

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient
from PIL import Image

from modae import apps
from modae.config import NetworkConfig, TrainConfig
from modae.data import SyntheticFactorSpec, synth_generate
from modae.model import ModulatedAutoencoder
from modae.service import create_app, image_to_png, load_handle, png_to_image
from modae.training import ArrayDataSource, Trainer, save_checkpoint


@pytest.fixture(scope="module")
def service_env(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("service")
    net = NetworkConfig(latent_dim=16, channel_schedule=(16, 16, 8), max_level=2)
    cfg = TrainConfig(phase_budgets=(8, 8, 1000), fade_budgets=(0, 0, 0),
                      batch_schedule=(8,), seed=7)
    ds = synth_generate(SyntheticFactorSpec(image_size=16), 32, seed=1)
    torch.manual_seed(7)
    trainer = Trainer(ModulatedAutoencoder(net), net, cfg, ArrayDataSource.from_synthetic(ds))
    trainer.run(3)
    ck = tmp / "checkpoint.zip"
    save_checkpoint(trainer, ck)
    # one attribute available to /attribute/apply
    attr_dir = tmp / "attrs"
    attr_dir.mkdir()
    handle0 = load_handle(ck)
    presets = handle0.presets()
    apps.save_attribute(attr_dir / "tint.json",
                        apps.AttributeVector(delta=torch.randn(16), range=presets["coarse"]))
    handle = load_handle(ck, attributes_dir=attr_dir)
    client = TestClient(create_app(handle))
    return client, handle, ck


def _png_of(img_arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(img_arr).save(buf, format="PNG")
    return buf.getvalue()


class TestModelInfo:
    def test_reports_config(self, service_env):
        client, handle, _ = service_env
        info = client.get("/model/info").json()
        assert info["latent_dim"] == 16
        assert info["resolution"] == handle.resolution
        assert info["checkpoint_digest"] == handle.digest
        assert "coarse" in info["layer_range_presets"]
        assert info["attributes"] == ["tint"]


class TestEncode:
    def test_valid_image_unit_latent(self, service_env):
        client, _, _ = service_env
        png = _png_of(np.random.default_rng(0).integers(0, 255, (20, 20, 3), dtype=np.uint8))
        r = client.post("/encode", content=png)
        assert r.status_code == 200
        z = np.array(r.json()["latent"])
        assert len(z) == 16
        assert abs(np.linalg.norm(z) - 1.0) < 1e-5

    def test_empty_body_400(self, service_env):
        client, _, _ = service_env
        assert client.post("/encode", content=b"").status_code == 400

    def test_garbage_400(self, service_env):
        client, _, _ = service_env
        assert client.post("/encode", content=b"not a png").status_code == 400

    def test_identical_uploads_identical_latents(self, service_env):
        client, _, _ = service_env
        png = _png_of(np.full((16, 16, 3), 128, dtype=np.uint8))
        a = client.post("/encode", content=png).json()["latent"]
        b = client.post("/encode", content=png).json()["latent"]
        assert a == b


class TestMixAndDecode:
    def _latent(self, client, seed=3):
        g = torch.Generator().manual_seed(seed)
        z = torch.randn(16, generator=g)
        return (z / z.norm()).tolist()

    def test_mix_equal_latents_is_decode(self, service_env):
        client, _, _ = service_env
        lat = self._latent(client)
        dec = client.post("/decode", json={"latent": lat})
        mix = client.post("/mix", json={"latent_a": lat, "latent_b": lat, "range_b": "coarse"})
        assert dec.status_code == mix.status_code == 200
        assert dec.content == mix.content

    def test_mix_all_range_is_decode_b(self, service_env):
        client, _, _ = service_env
        la, lb = self._latent(client, 1), self._latent(client, 2)
        mix = client.post("/mix", json={"latent_a": la, "latent_b": lb, "range_b": "all"})
        dec_b = client.post("/decode", json={"latent": lb})
        assert mix.content == dec_b.content

    def test_wrong_length_422(self, service_env):
        client, _, _ = service_env
        r = client.post("/mix", json={"latent_a": [0.1] * 4, "latent_b": [0.1] * 4,
                                      "range_b": "coarse"})
        assert r.status_code == 422

    def test_invalid_range_422(self, service_env):
        client, _, _ = service_env
        lat = self._latent(client)
        r = client.post("/mix", json={"latent_a": lat, "latent_b": lat, "range_b": "bogus"})
        assert r.status_code == 422

    def test_explicit_interval_range(self, service_env):
        client, _, _ = service_env
        la, lb = self._latent(client, 1), self._latent(client, 2)
        r = client.post("/mix", json={"latent_a": la, "latent_b": lb, "range_b": [1, 2]})
        assert r.status_code == 200


class TestSample:
    def test_n_zero_422(self, service_env):
        client, _, _ = service_env
        assert client.post("/sample", json={"n": 0, "seed": 1}).status_code == 422

    def test_fixed_seed_deterministic(self, service_env):
        client, _, _ = service_env
        a = client.post("/sample", json={"n": 2, "seed": 5}).json()["images"]
        b = client.post("/sample", json={"n": 2, "seed": 5}).json()["images"]
        assert a == b

    def test_fixed_latent_needs_range(self, service_env):
        client, _, _ = service_env
        g = torch.Generator().manual_seed(0)
        z = torch.randn(16, generator=g)
        lat = (z / z.norm()).tolist()
        r = client.post("/sample", json={"n": 2, "seed": 1, "fixed_latent": lat})
        assert r.status_code == 422
        r = client.post("/sample", json={"n": 2, "seed": 1, "fixed_latent": lat,
                                         "fixed_range": "coarse"})
        assert r.status_code == 200
        assert len(r.json()["images"]) == 2


class TestAttributeApply:
    def _latent(self):
        z = torch.randn(16, generator=torch.Generator().manual_seed(4))
        return (z / z.norm()).tolist()

    def test_strength_zero_equals_decode(self, service_env):
        client, _, _ = service_env
        lat = self._latent()
        a = client.post("/attribute/apply", json={"latent": lat, "attribute_id": "tint",
                                                  "strength": 0.0})
        d = client.post("/decode", json={"latent": lat})
        assert a.status_code == 200 and a.content == d.content

    def test_unknown_attribute_404(self, service_env):
        client, _, _ = service_env
        r = client.post("/attribute/apply", json={"latent": self._latent(),
                                                  "attribute_id": "nope", "strength": 1.0})
        assert r.status_code == 404


class TestNoModel:
    def test_503_everywhere(self):
        client = TestClient(create_app(None))
        assert client.get("/model/info").status_code == 503
        assert client.post("/encode", content=b"x").status_code == 503


class TestConcurrency:
    def test_hammer_identical_outputs(self, service_env):
        """Concurrent identical requests return identical bytes and never
        mutate the snapshot."""
        client, handle, _ = service_env
        before = {k: v.clone() for k, v in handle.model.state_dict().items()}
        lat = (torch.ones(16) / 4.0).tolist()
        expected = client.post("/decode", json={"latent": lat}).content
        results = [None] * 12
        def worker(i):
            results[i] = client.post("/decode", json={"latent": lat}).content
        threads = [threading.Thread(target=worker, args=(i,)) for i in range(12)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert all(r == expected for r in results)
        after = handle.model.state_dict()
        for k in before:
            assert torch.equal(before[k], after[k])


class TestPngRoundTrip:
    def test_round_half_even_mapping(self):
        img = torch.tensor([[[-1.0, 1.0], [0.0, 0.5]]]).repeat(3, 1, 1)
        png = image_to_png(img)
        back = np.asarray(Image.open(io.BytesIO(png)))
        assert back[0, 0, 0] == 0
        assert back[0, 1, 0] == 255
        # 0.0 -> 127.5 rounds half to even -> 128
        assert back[1, 0, 0] == 128

    def test_decode_resizes_any_input(self):
        arr = np.random.default_rng(0).integers(0, 255, (50, 70, 3), dtype=np.uint8)
        out = png_to_image(_png_of(arr), 16)
        assert out.shape == (3, 16, 16)
        assert float(out.min()) >= -1.0 and float(out.max()) <= 1.0
