"""HTTP inference service over one frozen checkpoint.

Endpoints wrap the application-layer operations; the model snapshot is
immutable after load, every request runs under no_grad on the averaged
decoder, and identical requests with identical seeds return identical bytes.
Images travel as PNG ([-1,1] mapped to 8-bit with round-half-even); latents
as JSON arrays.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, Response
from PIL import Image
from pydantic import BaseModel, Field

from . import apps
from .config import NetworkConfig, network_config_from_dict
from .data import BASE_RES, downsample_to
from .errors import CheckpointError
from .model import ModulatedAutoencoder, PhaseState
from .ops import sample_prior
from .training import read_manifest


def image_to_png(img: torch.Tensor) -> bytes:
    """[3, H, W] in [-1, 1] to PNG bytes, rounding half to even."""
    arr = img.detach().cpu().numpy().transpose(1, 2, 0)
    arr = np.rint((arr + 1.0) / 2.0 * 255.0).clip(0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def png_to_image(data: bytes, resolution: int) -> torch.Tensor:
    """Decode arbitrary raster bytes and resize to the model resolution."""
    with Image.open(io.BytesIO(data)) as im:
        im = im.convert("RGB")
        w, h = im.size
        side = min(w, h)
        im = im.crop(((w - side) // 2, (h - side) // 2,
                      (w - side) // 2 + side, (h - side) // 2 + side))
        im = im.resize((BASE_RES, BASE_RES), Image.BOX)
        arr = np.asarray(im, dtype=np.float32) / 255.0 * 2.0 - 1.0
    arr = downsample_to(arr.transpose(2, 0, 1), resolution)
    return torch.from_numpy(arr)


@dataclass
class ModelHandle:
    """Immutable inference snapshot of a checkpoint."""

    model: ModulatedAutoencoder
    net_cfg: NetworkConfig
    phase: PhaseState
    digest: str
    checkpoint_id: str
    attributes: dict[str, apps.AttributeVector] = field(default_factory=dict)

    @property
    def resolution(self) -> int:
        return self.phase.resolution

    def presets(self) -> dict[str, apps.LayerRange]:
        return apps.preset_ranges(self.model, self.phase.level)


def load_handle(checkpoint_path: str | Path,
                attributes_dir: str | Path | None = None) -> ModelHandle:
    path = Path(checkpoint_path)
    manifest = read_manifest(path)
    with zipfile.ZipFile(path) as zf:
        payload = zf.read("tensors.pt")
    try:
        state = torch.load(io.BytesIO(payload), map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"corrupt tensor payload in {path}: {e}") from e
    net_cfg = network_config_from_dict(manifest["network"])
    model = ModulatedAutoencoder(net_cfg)
    model.load_state_dict(state["model"])
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    phase = PhaseState(**manifest["phase"])
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    attributes = {}
    if attributes_dir is not None:
        for f in sorted(Path(attributes_dir).glob("*.json")):
            attributes[f.stem] = apps.load_attribute(f)
    return ModelHandle(model=model, net_cfg=net_cfg, phase=phase, digest=digest,
                       checkpoint_id=path.name, attributes=attributes)


class MixRequest(BaseModel):
    latent_a: list[float]
    latent_b: list[float]
    range_b: str | list[int] | dict
    seed: int | None = None


class DecodeRequest(BaseModel):
    latent: list[float]
    seed: int | None = None


class SampleRequest(BaseModel):
    n: int = Field(ge=1)
    seed: int
    fixed_latent: list[float] | None = None
    fixed_range: str | list[int] | dict | None = None


class AttributeRequest(BaseModel):
    latent: list[float]
    attribute_id: str
    strength: float


def create_app(handle: ModelHandle | None = None,
               studio_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="modulated autoencoder service")
    app.state.handle = handle
    from fastapi.middleware.cors import CORSMiddleware

    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    if studio_dir is not None and Path(studio_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/studio", StaticFiles(directory=studio_dir, html=True), name="studio")

    def need_handle() -> ModelHandle:
        h = app.state.handle
        if h is None:
            raise HTTPException(status_code=503, detail="no model loaded")
        return h

    def parse_latent(values: list[float], h: ModelHandle) -> torch.Tensor:
        if len(values) != h.net_cfg.latent_dim:
            raise HTTPException(status_code=422,
                                detail=f"latent must have length {h.net_cfg.latent_dim}")
        z = torch.tensor(values, dtype=torch.float32)
        if not torch.isfinite(z).all():
            raise HTTPException(status_code=422, detail="latent has non-finite entries")
        norm = float(z.norm())
        if norm < 1e-12:
            raise HTTPException(status_code=422, detail="latent is the zero vector")
        return z / norm

    def parse_range(spec, h: ModelHandle) -> apps.LayerRange:
        presets = h.presets()
        try:
            if isinstance(spec, str):
                if spec not in presets:
                    raise ValueError(f"unknown range {spec!r}; presets: {sorted(presets)}")
                return presets[spec]
            if isinstance(spec, dict):
                rng = apps.LayerRange(int(spec["first"]), int(spec["last"]))
            else:
                first, last = spec
                rng = apps.LayerRange(int(first), int(last))
            return rng.clipped(h.model.active_blocks(h.phase.level))
        except HTTPException:
            raise
        except Exception as e:
            raise HTTPException(status_code=422, detail=f"invalid layer range: {e}") from e

    def png_response(img: torch.Tensor) -> Response:
        return Response(content=image_to_png(img), media_type="image/png")

    @app.get("/model/info")
    def model_info():
        h = need_handle()
        return {
            "latent_dim": h.net_cfg.latent_dim,
            "resolution": h.resolution,
            "level": h.phase.level,
            "n_blocks": h.model.active_blocks(h.phase.level),
            "layer_range_presets": {k: [v.first, v.last] for k, v in h.presets().items()},
            "checkpoint_digest": h.digest,
            "checkpoint_id": h.checkpoint_id,
            "attributes": sorted(h.attributes),
        }

    @app.post("/encode")
    async def encode(request: Request):
        h = need_handle()
        body = await request.body()
        if not body:
            raise HTTPException(status_code=400, detail="empty body")
        try:
            img = png_to_image(body, h.resolution)
        except Exception as e:
            raise HTTPException(status_code=400, detail=f"undecodable image: {e}") from e
        with torch.no_grad():
            z = h.model.encode(img[None], h.phase)[0]
        return {"latent": [float(v) for v in z], "norm": 1.0}

    @app.post("/decode")
    def decode(req: DecodeRequest):
        h = need_handle()
        z = parse_latent(req.latent, h)
        with torch.no_grad():
            img = h.model.decode(z[None], h.phase, noise=None, use_ema=True)[0]
        return png_response(img)

    @app.post("/mix")
    def mix(req: MixRequest):
        h = need_handle()
        za = parse_latent(req.latent_a, h)
        zb = parse_latent(req.latent_b, h)
        rng = parse_range(req.range_b, h)
        img = apps.style_mix(h.model, za, zb, rng, h.phase, use_ema=True)[0]
        return png_response(img)

    @app.post("/sample")
    def sample(req: SampleRequest):
        h = need_handle()
        g = torch.Generator().manual_seed(req.seed)
        if req.fixed_latent is not None:
            if req.fixed_range is None:
                raise HTTPException(status_code=422,
                                    detail="fixed_latent requires fixed_range")
            zf = parse_latent(req.fixed_latent, h)
            rng = parse_range(req.fixed_range, h)
            imgs = apps.conditional_sample(h.model, zf, rng, req.n, g, h.phase, use_ema=True)
        else:
            z = sample_prior(req.n, h.net_cfg.latent_dim, g)
            with torch.no_grad():
                imgs = h.model.decode(z, h.phase, noise=None, use_ema=True)
        payload = [base64.b64encode(image_to_png(img)).decode("ascii") for img in imgs]
        return JSONResponse({"images": payload, "format": "png;base64"})

    @app.post("/attribute/apply")
    def attribute_apply(req: AttributeRequest):
        h = need_handle()
        z = parse_latent(req.latent, h)
        attr = h.attributes.get(req.attribute_id)
        if attr is None:
            raise HTTPException(status_code=404,
                                detail=f"unknown attribute {req.attribute_id!r}")
        img = apps.apply_attribute(h.model, z, attr, req.strength, h.phase, use_ema=True)[0]
        return png_response(img)

    return app
