"""Quantitative evaluation of a checkpoint: Frechet distance on the seeded
random projector, perceptual path length, reconstruction score, and the
factor-transfer probe.

Run after demos/02: python demos/05_metrics.py [checkpoint.zip]
"""

import sys

import torch

from _common import OUT

from modae.data import FactorProbe, SyntheticFactorSpec, synth_generate
from modae.metrics import (
    FeatureStats,
    RandomConvProjector,
    factor_transfer_score,
    frechet_distance,
    model_checksum,
    ppl,
    reconstruction_score,
    write_metric_report,
)
from modae.model import PhaseState
from modae.ops import sample_prior
from modae.service import load_handle

ck = sys.argv[1] if len(sys.argv) > 1 else str(OUT / "train_run" / "checkpoint.zip")
handle = load_handle(ck)
model, phase = handle.model, PhaseState.stable(handle.phase.level)
spec = SyntheticFactorSpec(image_size=32)
test = synth_generate(spec, 512, seed=2024)
real = torch.from_numpy(test.at_level(phase.level)).float()

# Frechet distance on fixed random conv features; useful for tracking runs
# against each other, NOT comparable to any published number
projector = RandomConvProjector(seed=0)
with torch.no_grad():
    fake = model.decode(sample_prior(512, model.latent_dim,
                                     torch.Generator().manual_seed(3)),
                        phase, use_ema=True)
fd = frechet_distance(FeatureStats.from_features(projector(real)),
                      FeatureStats.from_features(projector(fake)))

path_len = ppl(model, phase, n=512, generator=torch.Generator().manual_seed(5))
recon = reconstruction_score(model, real, phase=phase)
probe = FactorProbe(spec)
coarse, fine = factor_transfer_score(model, test, 2, probe, phase, n_pairs=200,
                                     generator=torch.Generator().manual_seed(9))

print(f"frechet (random projector): {fd:.3f}")
print(f"perceptual path length:     {path_len:.3f}")
print(f"reconstruction score:       {recon:.5f}")
print(f"factor transfer:            coarse {coarse:.2f}, fine {fine:.2f}")

report = OUT / "metric_report.jsonl"
checksum = model_checksum(model)
for name, value in [("frechet", fd), ("ppl", path_len), ("reconstruction", recon),
                    ("transfer_coarse", coarse), ("transfer_fine", fine)]:
    write_metric_report(report, name, value, 512, 5, checksum)
print("report:", report)
