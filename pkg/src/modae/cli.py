"""Command-line entry point: train, eval, sample, mix, serve, synth-gen,
attr-build. All commands are config-file driven plus a few flags; failures
exit nonzero with one machine-readable JSON error line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import apps, metrics
from .config import NetworkConfig, TrainConfig, load_config_file
from .data import SyntheticFactorSpec, ingest, synth_generate
from .model import ModulatedAutoencoder, PhaseState
from .ops import sample_prior
from .service import create_app, image_to_png, load_handle, png_to_image
from .training import ArrayDataSource, Trainer, load_checkpoint, save_checkpoint


def _load_configs(args) -> tuple[NetworkConfig, TrainConfig]:
    if args.config:
        return load_config_file(args.config)
    return NetworkConfig(), TrainConfig()


def _data_source(path: str, level: int, seed: int) -> ArrayDataSource:
    records = ingest(path, level, seed=seed)
    return ArrayDataSource.from_records(records)


def cmd_train(args) -> int:
    net_cfg, train_cfg = _load_configs(args)
    if args.seed is not None:
        train_cfg = TrainConfig(**{**train_cfg.__dict__, "seed": args.seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = _data_source(args.data, net_cfg.max_level, train_cfg.seed)
    if args.resume:
        trainer = load_checkpoint(args.resume, data=data, out_dir=out)
    else:
        torch.manual_seed(train_cfg.seed)
        model = ModulatedAutoencoder(net_cfg)
        trainer = Trainer(model, net_cfg, train_cfg, data, out_dir=out)
    ck_path = out / "checkpoint.zip"

    def checkpoint_cb(rec):
        if args.checkpoint_every and rec["step"] % args.checkpoint_every == 0:
            save_checkpoint(trainer, ck_path)
        if rec["step"] % 50 == 0:
            print(json.dumps(rec))

    if args.steps:
        trainer.run(args.steps, callback=checkpoint_cb)
    else:
        trainer.run_until(args.samples, callback=checkpoint_cb)
    save_checkpoint(trainer, ck_path)
    print(json.dumps({"checkpoint": str(ck_path), "step": trainer.step_idx,
                      "total_samples": trainer.total_samples,
                      "level": trainer.phase.level}))
    return 0


def cmd_synth_gen(args) -> int:
    spec = SyntheticFactorSpec(image_size=args.size)
    ds = synth_generate(spec, args.n, seed=args.seed or 0)
    ds.write_folder(args.out)
    print(json.dumps({"folder": str(args.out), "n": args.n, "size": args.size}))
    return 0


def cmd_eval(args) -> int:
    handle = load_handle(args.checkpoint)
    level = args.level if args.level is not None else handle.phase.level
    phase = PhaseState.stable(level)
    seed = args.seed or 0
    records = ingest(args.data, level, seed=seed)
    real = torch.from_numpy(np.stack([r.pixels for r in records])).float()
    n = min(len(real), args.n)
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        fake = handle.model.decode(sample_prior(n, handle.net_cfg.latent_dim, g),
                                   phase, noise=None, use_ema=True)
    projector = metrics.RandomConvProjector(seed=seed)
    stats_real = metrics.FeatureStats.from_features(projector(real[:n]))
    stats_fake = metrics.FeatureStats.from_features(projector(fake))
    fd = metrics.frechet_distance(stats_real, stats_fake)
    path_len = metrics.ppl(handle.model, phase, n=args.n,
                           generator=torch.Generator().manual_seed(seed))
    recon = metrics.reconstruction_score(handle.model, real[:n], phase=phase)
    checksum = metrics.model_checksum(handle.model)
    out = args.out or "metrics_report.jsonl"
    for name, value in [("frechet", fd), ("ppl", path_len), ("reconstruction", recon)]:
        metrics.write_metric_report(out, name, value, n, seed, checksum)
    print(json.dumps({"frechet": fd, "ppl": path_len, "reconstruction": recon,
                      "report": str(out)}))
    return 0


def cmd_sample(args) -> int:
    handle = load_handle(args.checkpoint)
    level = args.level if args.level is not None else handle.phase.level
    phase = PhaseState.stable(level)
    g = torch.Generator().manual_seed(args.seed or 0)
    z = sample_prior(args.n, handle.net_cfg.latent_dim, g)
    with torch.no_grad():
        imgs = handle.model.decode(z, phase, noise=None, use_ema=True)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(imgs):
        (out / f"sample_{i:04d}.png").write_bytes(image_to_png(img))
    print(json.dumps({"folder": str(out), "n": args.n}))
    return 0


def cmd_mix(args) -> int:
    handle = load_handle(args.checkpoint)
    phase = handle.phase
    with torch.no_grad():
        za = handle.model.encode(png_to_image(Path(args.image_a).read_bytes(),
                                              phase.resolution)[None], phase)[0]
        zb = handle.model.encode(png_to_image(Path(args.image_b).read_bytes(),
                                              phase.resolution)[None], phase)[0]
    presets = handle.presets()
    if args.range not in presets:
        raise ValueError(f"unknown range {args.range!r}; presets: {sorted(presets)}")
    img = apps.style_mix(handle.model, za, zb, presets[args.range], phase, use_ema=True)[0]
    Path(args.out).write_bytes(image_to_png(img))
    print(json.dumps({"out": str(args.out), "range": args.range}))
    return 0


def cmd_attr_build(args) -> int:
    handle = load_handle(args.checkpoint)
    phase = handle.phase
    pos = ingest(args.pos, phase.level, seed=args.seed or 0)
    neg = ingest(args.neg, phase.level, seed=args.seed or 0)
    presets = handle.presets()
    if args.range not in presets:
        raise ValueError(f"unknown range {args.range!r}; presets: {sorted(presets)}")
    pos_t = torch.from_numpy(np.stack([r.pixels for r in pos])).float()
    neg_t = torch.from_numpy(np.stack([r.pixels for r in neg])).float()
    note = f"pos={[r.source_id for r in pos]} neg={[r.source_id for r in neg]}"
    attr = apps.attribute_vector(handle.model, pos_t, neg_t, presets[args.range],
                                 phase, note=note)
    apps.save_attribute(args.out, attr)
    print(json.dumps({"out": str(args.out), "range": args.range}))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    handle = load_handle(args.checkpoint, attributes_dir=args.attributes)
    app = create_app(handle, studio_dir=args.studio)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modae")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoint=False):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--level", type=int, default=None)
        if checkpoint:
            sp.add_argument("--checkpoint", required=True)

    sp = sub.add_parser("train", help="train a model on an image folder")
    sp.add_argument("--config", default=None, help="JSON config file")
    sp.add_argument("--data", required=True, help="image folder")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--samples", type=int, default=100_000)
    sp.add_argument("--resume", default=None, help="checkpoint to resume from")
    sp.add_argument("--checkpoint-every", type=int, default=0)
    common(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("synth-gen", help="generate the synthetic factor dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=1024)
    sp.add_argument("--size", type=int, default=32)
    common(sp)
    sp.set_defaults(fn=cmd_synth_gen)

    sp = sub.add_parser("eval", help="metric report for a checkpoint")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", default=None)
    sp.add_argument("--n", type=int, default=256)
    common(sp, checkpoint=True)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("sample", help="random samples from a checkpoint")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=16)
    common(sp, checkpoint=True)
    sp.set_defaults(fn=cmd_sample)

    sp = sub.add_parser("mix", help="style-mix two images")
    sp.add_argument("--image-a", required=True)
    sp.add_argument("--image-b", required=True)
    sp.add_argument("--range", default="coarse")
    sp.add_argument("--out", required=True)
    common(sp, checkpoint=True)
    sp.set_defaults(fn=cmd_mix)

    sp = sub.add_parser("attr-build", help="build an attribute vector from exemplars")
    sp.add_argument("--pos", required=True)
    sp.add_argument("--neg", required=True)
    sp.add_argument("--range", default="intermediate")
    sp.add_argument("--out", required=True)
    common(sp, checkpoint=True)
    sp.set_defaults(fn=cmd_attr_build)

    sp = sub.add_parser("serve", help="run the HTTP inference service")
    sp.add_argument("--attributes", default=None, help="directory of attribute JSON files")
    sp.add_argument("--studio", default=None, help="built studio directory to serve at /studio")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    common(sp, checkpoint=True)
    sp.set_defaults(fn=cmd_serve)

    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
