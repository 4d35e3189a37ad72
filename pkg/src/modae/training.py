"""Alternating encoder/decoder optimization with progressive growing,
mixed-batch construction, optional flip-invariance terms, deterministic
per-step randomness, metrics logging and checkpointing.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .config import (
    LossWeights,
    NetworkConfig,
    TrainConfig,
    config_to_dict,
    network_config_from_dict,
    train_config_from_dict,
)
from .errors import CheckpointError, CheckpointVersionError, ContractViolation
from .losses import (
    AlphaMap,
    cosine_distance,
    decoder_loss,
    encoder_loss,
    grow_alpha,
    invariance_loss,
    robust_log_partition,
)
from .model import (
    ModulatedAutoencoder,
    PhaseState,
    grow,
    phase_from_total,
)
from .ops import sample_prior

CHECKPOINT_VERSION = 1


def _mix64(*parts: int) -> int:
    """Stable splitmix-style hash of integers into a 63-bit seed."""
    h = 0x9E3779B97F4A7C15
    for p in parts:
        h ^= (p & 0xFFFFFFFFFFFFFFFF) + 0x9E3779B97F4A7C15 + ((h << 6) & 0xFFFFFFFFFFFFFFFF) + (h >> 2)
        h &= 0xFFFFFFFFFFFFFFFF
        h ^= h >> 30
        h = (h * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
        h ^= h >> 27
    return h & 0x7FFFFFFFFFFFFFFF


_TAGS = {"data": 1, "enc_fake": 2, "enc_recon": 3, "enc_inv": 4, "dec_batch": 5, "dec_noise": 6}


def step_generator(seed: int, step: int, tag: str) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(_mix64(seed, step, _TAGS[tag]))
    return g


def schedule(samples_seen: int, cfg: TrainConfig, max_level: int) -> tuple[PhaseState, float, float]:
    """Map a total sample count to (phase, learning rate, KL margin)."""
    phase = phase_from_total(samples_seen, cfg, max_level)
    return phase, cfg.lr_for(phase.level), cfg.margin_for(phase.level)


def compose_encoder_objective(model, x, x_fake, z_prior, weights, alpha_map, alpha_param,
                              phase, cfg: TrainConfig, noise=None):
    """The scalar the encoder step optimizes, from the loss-module primitives.

    "margin" mode keeps the adversarial margin-clamped KL gap of the
    alternating game. "attract" (desk-scale default) replaces it with a small
    prior-attraction on real codes: the repulsion of generated codes never
    reaches its clamp at this scale and demonstrably stalls the latent cycle.
    Both modes add the shape-map likelihood normalizer and, when
    lambda_cycle > 0, the encoder side of the latent cycle.
    """
    from .losses import kl_to_sphere_prior, robust_distance

    z_real = model.encode(x, phase)
    kl_real = kl_to_sphere_prior(z_real)
    z_fake = model.encode(x_fake, phase)
    kl_fake = kl_to_sphere_prior(z_fake)
    if cfg.gap_mode == "margin":
        gap = torch.clamp(kl_real - kl_fake, min=-weights.margin_gap)
    else:
        gap = cfg.attract_weight * kl_real
    recon_img = model.decode(z_real, phase, noise=noise)
    recon = robust_distance(x, recon_img, alpha_map.values, alpha_map.c)
    # likelihood normalizer: the penalty alone drives every alpha to its floor
    alpha_nll = robust_log_partition(alpha_param).mean()
    total = gap + weights.lambda_x * recon + weights.lambda_x * alpha_nll
    parts = {
        "kl_real": float(kl_real.detach()),
        "kl_fake": float(kl_fake.detach()),
        "kl_gap_clamped": float(torch.clamp(kl_real - kl_fake, min=-weights.margin_gap).detach()),
        "gap_term": float(gap.detach()),
        "recon": float(recon.detach()),
        "alpha_nll": float(alpha_nll.detach()),
    }
    if cfg.lambda_cycle > 0:
        cycle = cosine_distance(z_prior, z_fake).mean()
        total = total + cfg.lambda_cycle * cycle
        parts["enc_cycle"] = float(cycle.detach())
    return total, parts


def build_decoder_batch(m: int, latent_dim: int, n_blocks: int, mixed_fraction: float,
                        generator: torch.Generator) -> tuple[torch.Tensor, tuple[torch.Tensor, torch.Tensor], int]:
    """ceil((1-f)*M) single prior codes, the rest as mixing pairs, plus one
    split point drawn uniformly over the active blocks."""
    if m < 1:
        raise ContractViolation("batch size must be >= 1")
    n_singles = int(np.ceil((1.0 - mixed_fraction) * m))
    n_pairs = m - n_singles
    singles = sample_prior(n_singles, latent_dim, generator)
    pair_a = sample_prior(n_pairs, latent_dim, generator)
    pair_b = sample_prior(n_pairs, latent_dim, generator)
    j = int(torch.randint(1, n_blocks + 1, (1,), generator=generator))
    return singles, (pair_a, pair_b), j


class ArrayDataSource:
    """Deterministic sampler over a preloaded [N, 3, S, S] image stack,
    with area-averaged views for lower phases."""

    def __init__(self, images: np.ndarray):
        if images.ndim != 4:
            raise ContractViolation(f"expected [N, 3, S, S], got {images.shape}")
        self._by_res = {images.shape[-1]: torch.from_numpy(np.ascontiguousarray(images)).float()}

    @classmethod
    def from_synthetic(cls, dataset) -> "ArrayDataSource":
        return cls(dataset.images)

    @classmethod
    def from_records(cls, records) -> "ArrayDataSource":
        return cls(np.stack([r.pixels for r in records]))

    def _at(self, res: int) -> torch.Tensor:
        if res not in self._by_res:
            top = max(self._by_res)
            arr = self._by_res[top]
            while arr.shape[-1] > res:
                n, c, h, w = arr.shape
                arr = arr.reshape(n, c, h // 2, 2, w // 2, 2).mean(dim=(3, 5))
            self._by_res[res] = arr
        return self._by_res[res]

    def batch(self, level: int, n: int, generator: torch.Generator) -> torch.Tensor:
        pool = self._at(4 * 2**level)
        idx = torch.randint(0, pool.shape[0], (n,), generator=generator)
        return pool[idx].clone()


@dataclass
class StepReport:
    step: int
    kind: str
    phase: dict
    losses: dict = field(default_factory=dict)
    grad_norm: float = 0.0
    lr: float = 0.0
    margin: float = 0.0
    diverged: bool = False

    def to_dict(self) -> dict:
        return {
            "step": self.step, "kind": self.kind, "phase": self.phase,
            "losses": self.losses, "grad_norm": self.grad_norm,
            "lr": self.lr, "margin": self.margin, "diverged": self.diverged,
        }


def _grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(p.grad.detach().pow(2).sum())
    return total**0.5


def _adam(params, cfg: TrainConfig, lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)


class Trainer:
    """Owns the model, phase state, optimizers and the robust-loss shape map.

    Every random draw comes from a generator seeded by (seed, step, purpose),
    so a resumed run replays the exact same trace as an uninterrupted one.
    """

    def __init__(self, model: ModulatedAutoencoder, net_cfg: NetworkConfig,
                 train_cfg: TrainConfig, data: ArrayDataSource | None,
                 out_dir: str | Path | None = None):
        if train_cfg.invariance_mode == "hflip" and net_cfg.extra_block_level is None:
            raise ContractViolation("hflip invariance needs the extra 8x8 block (extra_block_level=1)")
        self.model = model
        self.net_cfg = net_cfg
        self.cfg = train_cfg
        self.data = data
        self.step_idx = 0
        self.total_samples = 0
        self.phase = phase_from_total(0, train_cfg, net_cfg.max_level)
        self._alpha_map = AlphaMap.initial(self.phase.level)
        self.alpha = nn.Parameter(self._alpha_map.values.clone())
        self._alpha_map.values = self.alpha
        lr = train_cfg.lr_for(self.phase.level)
        self.opt_enc = _adam(self.model.encoder.parameters(), train_cfg, lr)
        self.opt_dec = _adam(self.model.decoder.parameters(), train_cfg, lr)
        self.opt_alpha = _adam([self.alpha], train_cfg, lr)
        self._log_file = None
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            self._log_file = (out / "metrics.jsonl").open("a")

    # --- phase / alpha bookkeeping ---------------------------------------

    @property
    def alpha_map(self) -> AlphaMap:
        return self._alpha_map

    def _weights(self, margin: float) -> LossWeights:
        return LossWeights(lambda_x=self.cfg.lambda_x, lambda_z=self.cfg.lambda_z, margin_gap=margin)

    def _set_lr(self, lr: float) -> None:
        for opt in (self.opt_enc, self.opt_dec, self.opt_alpha):
            for group in opt.param_groups:
                group["lr"] = lr

    def _advance_phase(self, n_samples: int) -> None:
        self.total_samples += n_samples
        new = grow(PhaseState(self.phase.level, self.phase.fade_alpha,
                              self.phase.samples_seen + n_samples),
                   self.cfg, self.net_cfg.max_level)
        while self._alpha_map.level < new.level:
            grown = grow_alpha(self._alpha_map, self.net_cfg.max_level)
            self.alpha = nn.Parameter(grown.values.clone())
            self._alpha_map = AlphaMap(values=self.alpha, level=grown.level, c=grown.c)
            # Adam moments for the replicated pixels restart at the new level
            self.opt_alpha = _adam([self.alpha], self.cfg, self.cfg.lr_for(new.level))
        self.phase = new

    # --- steps -------------------------------------------------------------

    def _zero_all(self) -> None:
        self.model.zero_grad(set_to_none=True)
        if self.alpha.grad is not None:
            self.alpha.grad = None

    def encoder_step(self, x: torch.Tensor | None = None) -> StepReport:
        """One update of the encoder parameters and the shape map; decoder
        parameters are untouched."""
        step = self.step_idx
        phase = self.phase
        batch = self.cfg.batch_for(phase.level)
        _, lr, margin = schedule(self.total_samples, self.cfg, self.net_cfg.max_level)
        self._set_lr(lr)
        if x is None:
            x = self.data.batch(phase.level, batch, step_generator(self.cfg.seed, step, "data"))
        if self.cfg.mirror_augment:
            g = step_generator(self.cfg.seed, step, "enc_inv")
            flip = torch.rand(x.shape[0], generator=g) < 0.5
            x = torch.where(flip[:, None, None, None], x.flip(-1), x)

        g_fake = step_generator(self.cfg.seed, step, "enc_fake")
        with torch.no_grad():
            z_prior = sample_prior(x.shape[0], self.model.latent_dim, g_fake)
            x_fake = self.model.decode(z_prior, phase, noise=g_fake)
        g_recon = step_generator(self.cfg.seed, step, "enc_recon")
        total, parts = compose_encoder_objective(
            self.model, x, x_fake, z_prior, self._weights(margin),
            self._alpha_map, self.alpha, phase, self.cfg, noise=g_recon)
        if self.cfg.invariance_mode == "hflip":
            inv_total, inv_parts = self._invariance_terms(x, phase)
            if inv_total is not None:
                total = total + inv_total
                parts.update(inv_parts)

        report = StepReport(step=step, kind="encoder", phase=self._phase_dict(),
                            losses=parts, lr=lr, margin=margin)
        report.losses["total"] = float(total.detach())
        if not torch.isfinite(total):
            report.diverged = True
            self._zero_all()
            return report
        self._zero_all()
        total.backward()
        report.grad_norm = _grad_norm(self.model.encoder.parameters())
        self.opt_enc.step()
        self.opt_alpha.step()
        self._alpha_map.clamp_()
        self._zero_all()
        return report

    def _invariance_terms(self, x: torch.Tensor, phase: PhaseState):
        """L_inv + L_inv' on (x, hflip(x)) pairs; j=3, k=N in block indices.

        Needs at least three active blocks, i.e. from the 8x8 phase on when
        the extra 8x8 block is present. 50% of the batch is pre-flipped."""
        n = self.model.active_blocks(phase.level)
        if n < 3:
            return None, {}
        g = step_generator(self.cfg.seed, self.step_idx, "enc_inv")
        flip = torch.rand(x.shape[0], generator=g) < 0.5
        x1 = torch.where(flip[:, None, None, None], x.flip(-1), x)
        x2 = x1.flip(-1)
        z1 = self.model.encode(x1, phase)
        z2 = self.model.encode(x2, phase)
        l_inv = invariance_loss(self.model, x2, z1, z2, 3, n, phase, self._alpha_map, noise=g)
        l_inv_c = invariance_loss(self.model, x1, z2, z1, 3, n, phase, self._alpha_map, noise=g)
        return l_inv + l_inv_c, {"l_inv": float(l_inv.detach()), "l_inv_prime": float(l_inv_c.detach())}

    def invariance_step(self, x: torch.Tensor) -> StepReport:
        if self.cfg.invariance_mode != "hflip":
            raise ContractViolation("invariance_step requires invariance_mode == 'hflip'")
        return self.encoder_step(x)

    def decoder_step(self) -> StepReport:
        """One update of the decoder parameters (convs, modulation maps and
        noise scales); encoder parameters are untouched. Ends with the
        averaged-copy update."""
        step = self.step_idx
        phase = self.phase
        batch = self.cfg.batch_for(phase.level)
        _, lr, margin = schedule(self.total_samples, self.cfg, self.net_cfg.max_level)
        self._set_lr(lr)
        g_batch = step_generator(self.cfg.seed, step, "dec_batch")
        singles, pairs, j = build_decoder_batch(batch, self.model.latent_dim,
                                                self.model.active_blocks(phase.level),
                                                self.cfg.mixed_fraction, g_batch)
        g_noise = step_generator(self.cfg.seed, step, "dec_noise")
        total, parts = decoder_loss(self.model, singles, pairs, j,
                                    self._weights(margin), phase, noise_generator=g_noise)
        report = StepReport(step=step, kind="decoder", phase=self._phase_dict(),
                            losses=parts, lr=lr, margin=margin)
        report.losses["total"] = float(total.detach())
        if not torch.isfinite(total):
            report.diverged = True
            self._zero_all()
            return report
        self._zero_all()
        total.backward()
        report.grad_norm = _grad_norm(self.model.decoder.parameters())
        self.opt_dec.step()
        self._zero_all()
        self.model.update_ema(self.cfg.ema_decay)
        return report

    def _phase_dict(self) -> dict:
        return {"level": self.phase.level, "fade_alpha": self.phase.fade_alpha,
                "samples_seen": self.phase.samples_seen, "total_samples": self.total_samples}

    def train_step(self) -> dict:
        """One encoder update followed by one decoder update."""
        batch = self.cfg.batch_for(self.phase.level)
        enc = self.encoder_step()
        dec = self.decoder_step()
        record = {"step": self.step_idx, "phase": self._phase_dict(),
                  "encoder": enc.losses, "decoder": dec.losses,
                  "grad_norm_enc": enc.grad_norm, "grad_norm_dec": dec.grad_norm,
                  "lr": enc.lr, "margin": enc.margin,
                  "diverged": enc.diverged or dec.diverged}
        if self._log_file is not None:
            self._log_file.write(json.dumps(record) + "\n")
            self._log_file.flush()
        self.step_idx += 1
        self._advance_phase(batch)
        return record

    def run(self, n_steps: int, callback=None) -> list[dict]:
        out = []
        for _ in range(n_steps):
            rec = self.train_step()
            out.append(rec)
            if callback is not None:
                callback(rec)
        return out

    def run_until(self, total_samples: int, callback=None) -> list[dict]:
        out = []
        while self.total_samples < total_samples:
            rec = self.train_step()
            out.append(rec)
            if callback is not None:
                callback(rec)
        return out


# --- checkpointing ------------------------------------------------------------


def save_checkpoint(trainer: Trainer, path: str | Path) -> None:
    """Single zip archive: readable manifest + tensor payload."""
    manifest = {
        "version": CHECKPOINT_VERSION,
        "network": config_to_dict(trainer.net_cfg),
        "train": config_to_dict(trainer.cfg),
        "phase": {"level": trainer.phase.level, "fade_alpha": trainer.phase.fade_alpha,
                  "samples_seen": trainer.phase.samples_seen},
        "total_samples": trainer.total_samples,
        "step": trainer.step_idx,
        "alpha_level": trainer.alpha_map.level,
        "rng_seeds": {"base": trainer.cfg.seed},
    }
    payload = io.BytesIO()
    torch.save({
        "model": trainer.model.state_dict(),
        "alpha": trainer.alpha.detach().clone(),
        "opt_enc": trainer.opt_enc.state_dict(),
        "opt_dec": trainer.opt_dec.state_dict(),
        "opt_alpha": trainer.opt_alpha.state_dict(),
    }, payload)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w") as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=2))
        zf.writestr("tensors.pt", payload.getvalue())


def read_manifest(path: str | Path) -> dict:
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, OSError) as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}") from e
    version = manifest.get("version")
    if not isinstance(version, int) or version < 1:
        raise CheckpointError(f"checkpoint {path} has invalid version field {version!r}")
    if version > CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {version} is newer than supported {CHECKPOINT_VERSION}"
        )
    return manifest


def load_checkpoint(path: str | Path, data: ArrayDataSource | None = None,
                    out_dir: str | Path | None = None) -> Trainer:
    manifest = read_manifest(path)
    with zipfile.ZipFile(path) as zf:
        payload = zf.read("tensors.pt")
    try:
        state = torch.load(io.BytesIO(payload), map_location="cpu", weights_only=True)
    except Exception as e:
        raise CheckpointError(f"corrupt tensor payload in {path}: {e}") from e
    net_cfg = network_config_from_dict(manifest["network"])
    train_cfg = train_config_from_dict(manifest["train"])
    model = ModulatedAutoencoder(net_cfg)
    model.load_state_dict(state["model"])
    trainer = Trainer(model, net_cfg, train_cfg, data, out_dir=out_dir)
    trainer.step_idx = manifest["step"]
    trainer.total_samples = manifest["total_samples"]
    trainer.phase = PhaseState(**manifest["phase"])
    alpha_level = manifest["alpha_level"]
    trainer.alpha = nn.Parameter(state["alpha"].clone())
    trainer._alpha_map = AlphaMap(values=trainer.alpha, level=alpha_level)
    trainer.opt_enc = _adam(trainer.model.encoder.parameters(), train_cfg, train_cfg.lr_for(trainer.phase.level))
    trainer.opt_dec = _adam(trainer.model.decoder.parameters(), train_cfg, train_cfg.lr_for(trainer.phase.level))
    trainer.opt_alpha = _adam([trainer.alpha], train_cfg, train_cfg.lr_for(trainer.phase.level))
    trainer.opt_enc.load_state_dict(state["opt_enc"])
    trainer.opt_dec.load_state_dict(state["opt_dec"])
    trainer.opt_alpha.load_state_dict(state["opt_alpha"])
    return trainer
