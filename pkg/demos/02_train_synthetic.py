"""Train the desk-scale model on the synthetic dataset, growing 4x4 -> 32x32.

The full run (270k samples) takes roughly an hour on two CPU cores; pass a
smaller sample budget for a quick look, e.g.:

    python demos/02_train_synthetic.py 60000
"""

import sys
import time

import torch

from _common import DESK_NET, DESK_TRAIN, OUT

from modae.data import SyntheticFactorSpec, synth_generate
from modae.model import ModulatedAutoencoder
from modae.training import ArrayDataSource, Trainer, save_checkpoint

budget = int(sys.argv[1]) if len(sys.argv) > 1 else 270_000

torch.set_num_threads(2)
train_ds = synth_generate(SyntheticFactorSpec(image_size=32), 4096, seed=100)
src = ArrayDataSource.from_synthetic(train_ds)

torch.manual_seed(DESK_TRAIN.seed)
model = ModulatedAutoencoder(DESK_NET)
trainer = Trainer(model, DESK_NET, DESK_TRAIN, src, out_dir=OUT / "train_run")

t0 = time.time()
while trainer.total_samples < budget:
    rec = trainer.train_step()
    if rec["step"] % 100 == 0:
        ph = rec["phase"]
        print(f"step {rec['step']:6d} level {ph['level']} fade {ph['fade_alpha']:.2f} "
              f"samples {ph['total_samples']:7d} | enc {rec['encoder']['total']:8.4f} "
              f"dec {rec['decoder']['total']:8.4f} | {(time.time() - t0)/60:.1f} min",
              flush=True)

ck = OUT / "train_run" / "checkpoint.zip"
save_checkpoint(trainer, ck)
print("checkpoint:", ck)
print("metrics log:", OUT / "train_run" / "metrics.jsonl")
