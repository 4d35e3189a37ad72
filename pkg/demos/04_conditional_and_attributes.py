"""Conditional sampling (freeze the coarse blocks, resample the rest) and
scale-restricted attribute editing built from a handful of exemplars.

Run after demos/02: python demos/04_conditional_and_attributes.py [checkpoint.zip]
"""

import sys

import numpy as np
import torch

from _common import OUT, save_grid

from modae import apps
from modae.data import SyntheticFactorSpec, synth_generate
from modae.model import PhaseState
from modae.service import load_handle

ck = sys.argv[1] if len(sys.argv) > 1 else str(OUT / "train_run" / "checkpoint.zip")
handle = load_handle(ck)
model, phase = handle.model, PhaseState.stable(handle.phase.level)
presets = apps.preset_ranges(model, phase.level)

test = synth_generate(SyntheticFactorSpec(image_size=32), 64, seed=900)
x = torch.from_numpy(test.at_level(phase.level)).float()
with torch.no_grad():
    z = model.encode(x, phase)

# conditional samples: same coarse content (shape+position), random rest
rows = []
for i in range(3):
    rows.append(x[i])
    cond = apps.conditional_sample(model, z[i], presets["coarse"], 7,
                                   torch.Generator().manual_seed(i), phase, use_ema=True)
    rows.extend(cond)
save_grid(rows, OUT / "conditional_samples.png", cols=8)

# attribute vector from 4+4 exemplars: red fill vs blue fill, restricted to
# the finer blocks so the shape keeps still
labels = test.labels
red_idx = [i for i, l in enumerate(labels) if l.color == 0][:4]
blue_idx = [i for i, l in enumerate(labels) if l.color == 4][:4]
fine_range = apps.LayerRange(presets["coarse"].last + 1, model.active_blocks(phase.level))
attr = apps.attribute_vector(model, x[red_idx], x[blue_idx], fine_range, phase,
                             note=f"pos={red_idx} neg={blue_idx}")
apps.save_attribute(OUT / "toward_red.json", attr)

cells = []
for i in range(4):
    for s in (-1.5, -0.75, 0.0, 0.75, 1.5):
        cells.append(apps.apply_attribute(model, z[i], attr, s, phase, use_ema=True)[0])
save_grid(cells, OUT / "attribute_sweep.png", cols=5)
print("columns sweep the attribute strength from -1.5 to 1.5")
