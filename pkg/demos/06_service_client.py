"""Drive the HTTP service end to end from Python: encode an image, decode,
mix at a named range, request conditional samples, apply an attribute.

Either point it at a running server (python -m modae.cli serve ...) or let it
spin up an in-process test client, the default.

Run after demos/02 and 04: python demos/06_service_client.py [checkpoint.zip]
"""

import base64
import sys

from _common import OUT

from modae.service import create_app, image_to_png, load_handle

ck = sys.argv[1] if len(sys.argv) > 1 else str(OUT / "train_run" / "checkpoint.zip")
attr_dir = OUT  # demos/04 wrote toward_red.json here
handle = load_handle(ck, attributes_dir=attr_dir)

from fastapi.testclient import TestClient

client = TestClient(create_app(handle))

info = client.get("/model/info").json()
print("model:", {k: info[k] for k in ("latent_dim", "resolution", "layer_range_presets",
                                      "attributes")})

# encode a synthetic image uploaded as PNG bytes
import torch
from modae.data import SyntheticFactorSpec, synth_generate

test = synth_generate(SyntheticFactorSpec(image_size=32), 2, seed=42)
png = image_to_png(torch.from_numpy(test.images[0]))
latent = client.post("/encode", content=png).json()["latent"]
print("encoded latent dim:", len(latent))

(OUT / "svc_decoded.png").write_bytes(
    client.post("/decode", json={"latent": latent}).content)

latent_b = client.post("/encode", content=image_to_png(torch.from_numpy(test.images[1]))
                       ).json()["latent"]
(OUT / "svc_mixed.png").write_bytes(
    client.post("/mix", json={"latent_a": latent, "latent_b": latent_b,
                              "range_b": "intermediate"}).content)

samples = client.post("/sample", json={"n": 4, "seed": 11, "fixed_latent": latent,
                                       "fixed_range": "coarse"}).json()["images"]
for i, b64 in enumerate(samples):
    (OUT / f"svc_conditional_{i}.png").write_bytes(base64.b64decode(b64))

if info["attributes"]:
    name = info["attributes"][0]
    (OUT / "svc_attribute.png").write_bytes(
        client.post("/attribute/apply", json={"latent": latent, "attribute_id": name,
                                              "strength": 1.0}).content)
    print("applied attribute:", name)

print("service outputs written to", OUT)
