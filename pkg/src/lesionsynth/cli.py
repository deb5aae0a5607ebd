"""Command-line entry points.

Every run writes its outputs under one directory together with a manifest
(config snapshot, seed, input hashes) that suffices to re-execute the run
bit-exactly.  JSON reports go to stdout, progress lines to stderr; failures
exit nonzero with a single machine-parsable error line on stderr.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

import numpy as np

from .volio import (Config, RunManifest, content_hash, read_volume,
                    write_volume, read_checkpoint, write_checkpoint)
from .models import NetConfig, build_mask_stage, build_lesion_stage
from .losses import LossWeights, GpConfig
from .phantoms import PhantomSpec, make_phantoms, SamplePair
from .conditioning import MaskVolume
from .training import (TrainConfig, TrainedStage, train_mask_stage,
                       train_lesion_stage, write_loss_csv)
from .sampling import sample_masks, sample_lesions, composite
from .metrics import synthesis_report, segmentation_report
from .experiments import SegTrainConfig, run_downstream_experiment

__all__ = ["main"]


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _net_config(cfg):
    return NetConfig(side=cfg.side, levels=cfg.levels,
                     base_channels=cfg.base_channels, latent_dim=cfg.latent_dim)


def _train_config(cfg):
    return TrainConfig(
        net=_net_config(cfg), lr=cfg.lr, batch=cfg.batch, epochs=cfg.epochs,
        n_critic=cfg.n_critic, seed=cfg.seed,
        weights=LossWeights(w_rec=cfg.w_rec, w_kl=cfg.w_kl, w_adv=cfg.w_adv),
        gp=GpConfig(gp_lambda=cfg.gp_lambda))


def _load_config(path):
    return Config.load(path) if path else Config()


def _prepare_out(args, cfg, inputs):
    os.makedirs(args.out, exist_ok=True)
    hashes = {os.path.basename(p): content_hash(p) for p in inputs}
    manifest = RunManifest(args.command, cfg, hashes)
    manifest.save(os.path.join(args.out, "manifest.json"))
    cfg.save(os.path.join(args.out, "config.cfg"))
    return manifest


def _load_pairs(data_dir):
    masks = sorted(glob.glob(os.path.join(data_dir, "mask_*.pvae")))
    if not masks:
        raise FileNotFoundError(f"no mask_*.pvae files under {data_dir}")
    pairs, paths = [], []
    for mpath in masks:
        stem = os.path.basename(mpath)[len("mask_"):-len(".pvae")]
        lpath = os.path.join(data_dir, f"lesion_{stem}.pvae")
        if not os.path.exists(lpath):
            raise FileNotFoundError(f"missing paired volume {lpath}")
        mask = MaskVolume(read_volume(mpath))
        lesion = read_volume(lpath).astype(np.float32)
        side = mask.side
        pairs.append(SamplePair(mask=mask, lesion=lesion, host=lesion,
                                origin=(0, 0, 0)))
        paths.extend([mpath, lpath])
    return pairs, paths


def _checkpoint_arrays(trained):
    arrays = {p.id: p.value.data for p in trained.stage.parameters()}
    if trained.condition_range is not None:
        arrays["meta.condition_range"] = np.array(trained.condition_range,
                                                  dtype=np.float32)
    return arrays


def _load_stage(path, cfg, kind):
    blobs = read_checkpoint(path)
    rng = np.random.default_rng(0)  # shapes only; values are overwritten
    build = build_mask_stage if kind == "mask" else build_lesion_stage
    stage = build(_net_config(cfg), rng)
    for p in stage.parameters():
        if p.id not in blobs:
            raise KeyError(f"{path}: checkpoint lacks parameter {p.id}")
        if blobs[p.id].shape != p.value.data.shape:
            raise ValueError(
                f"{path}: {p.id} has shape {blobs[p.id].shape}, "
                f"model wants {p.value.data.shape}")
        p.value.data[...] = blobs[p.id]
    crange = blobs.get("meta.condition_range")
    return TrainedStage(stage=stage, log=[],
                        condition_range=None if crange is None
                        else (float(crange[0]), float(crange[1])))


# --- subcommands -------------------------------------------------------------

def _cmd_phantoms(args):
    cfg = _load_config(args.config)
    _prepare_out(args, cfg, [])
    spec = PhantomSpec(side=cfg.side, count=args.count)
    pairs = make_phantoms(spec, seed=cfg.seed)
    for i, pair in enumerate(pairs):
        write_volume(os.path.join(args.out, f"mask_{i:03d}.pvae"),
                     pair.mask.data.astype(np.uint8))
        write_volume(os.path.join(args.out, f"lesion_{i:03d}.pvae"), pair.lesion)
        write_volume(os.path.join(args.out, f"host_{i:03d}.pvae"), pair.host)
    origins = {f"host_{i:03d}.pvae": list(p.origin) for i, p in enumerate(pairs)}
    with open(os.path.join(args.out, "origins.json"), "w") as fh:
        json.dump(origins, fh, indent=2, sort_keys=True)
    _log(f"wrote {len(pairs)} phantom triples to {args.out}")
    return 0


def _train_command(args, kind):
    cfg = _load_config(args.config)
    pairs, paths = _load_pairs(args.data)
    _prepare_out(args, cfg, paths)
    tc = _train_config(cfg)
    train = train_mask_stage if kind == "mask" else train_lesion_stage
    _log(f"training {kind} stage: {len(pairs)} pairs, "
         f"{tc.epochs * max(len(pairs) // tc.batch, 1)} generator steps")
    trained = train(pairs, tc)
    write_checkpoint(os.path.join(args.out, f"{kind}_net.pvck"),
                     _checkpoint_arrays(trained))
    write_loss_csv(os.path.join(args.out, f"loss_{kind}.csv"), trained.log)
    last = trained.log[-1]
    print(json.dumps({"l_rec": last.l_rec, "l_kl": last.l_kl,
                      "steps": len(trained.log)}, sort_keys=True))
    return 0


def _cmd_sample(args):
    cfg = _load_config(args.config)
    _prepare_out(args, cfg, [args.mask_net, args.lesion_net])
    mask_stage = _load_stage(args.mask_net, cfg, "mask")
    lesion_stage = _load_stage(args.lesion_net, cfg, "lesion")
    if mask_stage.condition_range is None:
        raise ValueError(f"{args.mask_net} carries no condition range")
    masks = sample_masks(mask_stage, args.count, seed=[cfg.seed, 8],
                         threshold=cfg.threshold)
    lesions = sample_lesions(lesion_stage, masks, seed=[cfg.seed, 9])
    for i, (mask, lesion) in enumerate(zip(masks, lesions)):
        write_volume(os.path.join(args.out, f"syn_mask_{i:03d}.pvae"),
                     mask.data.astype(np.uint8))
        write_volume(os.path.join(args.out, f"syn_lesion_{i:03d}.pvae"), lesion)
    _log(f"wrote {len(masks)} synthetic pairs to {args.out}")
    return 0


def _cmd_composite(args):
    host = read_volume(args.host)
    lesion = read_volume(args.lesion)
    mask = MaskVolume(read_volume(args.mask))
    origin = tuple(int(v) for v in args.origin.split(","))
    out = composite(host, lesion, mask, origin)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    write_volume(args.out, out)
    _log(f"wrote composite to {args.out}")
    return 0


def _cmd_eval_synth(args):
    ref = read_volume(args.ref).astype(np.float32)
    test = read_volume(args.test).astype(np.float32)
    print(synthesis_report(ref, test).to_json())
    return 0


def _cmd_eval_seg(args):
    ref = read_volume(args.ref)
    pred = read_volume(args.pred)
    print(segmentation_report(ref > 0.5, pred > 0.5).to_json())
    return 0


def _cmd_downstream(args):
    cfg = _load_config(args.config)
    train_pairs, train_paths = _load_pairs(args.data)
    held_pairs, held_paths = _load_pairs(args.held)
    _prepare_out(args, cfg, train_paths + held_paths
                 + [args.mask_net, args.lesion_net])
    mask_stage = _load_stage(args.mask_net, cfg, "mask")
    lesion_stage = _load_stage(args.lesion_net, cfg, "lesion")
    seg_cfg = SegTrainConfig(seed=cfg.seed, steps=args.steps)
    report = run_downstream_experiment(train_pairs, held_pairs, mask_stage,
                                       lesion_stage, seg_cfg,
                                       synth_count=args.synth_count)
    text = report.to_json()
    with open(os.path.join(args.out, "downstream.json"), "w") as fh:
        fh.write(text + "\n")
    print(text)
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="lesionsynth",
        description="Progressive adversarial lesion synthesis toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantoms", help="generate a procedural phantom dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--out", required=True)

    for kind in ("mask", "lesion"):
        p = sub.add_parser(f"train-{kind}", help=f"train the {kind} stage")
        p.add_argument("--config", default=None)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)

    p = sub.add_parser("sample", help="draw synthetic mask/lesion pairs")
    p.add_argument("--config", default=None)
    p.add_argument("--mask-net", required=True)
    p.add_argument("--lesion-net", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--out", required=True)

    p = sub.add_parser("composite", help="paste a lesion cube into a host volume")
    p.add_argument("--host", required=True)
    p.add_argument("--lesion", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--origin", required=True, help="d,h,w of the cube corner")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-synth", help="image-quality report for two volumes")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)

    p = sub.add_parser("eval-seg", help="overlap/surface report for two masks")
    p.add_argument("--ref", required=True)
    p.add_argument("--pred", required=True)

    p = sub.add_parser("downstream", help="raw-only vs augmented segmenter study")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--held", required=True)
    p.add_argument("--mask-net", required=True)
    p.add_argument("--lesion-net", required=True)
    p.add_argument("--synth-count", type=int, default=100)
    p.add_argument("--steps", type=int, default=150)
    p.add_argument("--out", required=True)
    return parser


_DISPATCH = {
    "phantoms": _cmd_phantoms,
    "train-mask": lambda a: _train_command(a, "mask"),
    "train-lesion": lambda a: _train_command(a, "lesion"),
    "sample": _cmd_sample,
    "composite": _cmd_composite,
    "eval-synth": _cmd_eval_synth,
    "eval-seg": _cmd_eval_seg,
    "downstream": _cmd_downstream,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _DISPATCH[args.command](args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(json.dumps({"error": f"{type(exc).__name__}: {exc}"}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
