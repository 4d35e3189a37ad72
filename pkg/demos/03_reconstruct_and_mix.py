"""Reconstruction and scale mixing with a trained checkpoint.

The mixing matrix drives the coarse blocks (4x4-8x8) with the row image's
code and the remaining blocks with the column image's code: rows should set
shape and position, columns the fill color.

Run after demos/02: python demos/03_reconstruct_and_mix.py [checkpoint.zip]
"""

import sys

import torch

from _common import OUT, save_grid

from modae import apps
from modae.data import SyntheticFactorSpec, synth_generate
from modae.model import PhaseState
from modae.service import load_handle

ck = sys.argv[1] if len(sys.argv) > 1 else str(OUT / "train_run" / "checkpoint.zip")
handle = load_handle(ck)
model, phase = handle.model, PhaseState.stable(handle.phase.level)

test = synth_generate(SyntheticFactorSpec(image_size=32), 16, seed=777)
x = torch.from_numpy(test.at_level(phase.level)).float()

with torch.no_grad():
    z = model.encode(x, phase)
    recon = model.decode(z, phase, use_ema=True)

rows = []
for i in range(6):
    rows.append(x[i])
    rows.append(recon[i])
save_grid(rows, OUT / "reconstructions.png", cols=2)

# mixing matrix: coarse blocks from row image A, the rest from column image B
presets = apps.preset_ranges(model, phase.level)
coarse = presets["coarse"]
rest = apps.LayerRange(coarse.last + 1, model.active_blocks(phase.level))
cells = []
n = 5
for i in range(n):
    for j in range(n):
        mixed = apps.style_mix(model, z[i], z[j], rest, phase, use_ema=True)
        cells.append(mixed[0])
save_grid(cells, OUT / "mixing_matrix.png", cols=n)
print("rows carry shape/position, columns carry color")

# interpolation grid between four reconstructed corners
grid = apps.interpolate_grid(model, [z[0], z[1], z[2], z[3]], 5, phase, use_ema=True)
save_grid(grid.reshape(-1, *grid.shape[2:]), OUT / "interpolation_grid.png", cols=5)
