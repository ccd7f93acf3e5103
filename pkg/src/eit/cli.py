"""Command-line surface: describe / gradcheck / train / probe / gen-data.

Exit codes: 0 success, 1 validation or contract failure, 2 numerical
failure (gradcheck fail, training divergence). Every command writes a
manifest.json echoing the resolved configuration and seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import checkpoint, costs, probes
from .data import generate_synthetic, load_dataset, save_dataset
from .errors import DivergenceError, EitError
from .gradcheck import gradcheck, worst_offender
from .model import (config_to_dict, forward, init_params, load_config,
                    schedule_for)
from .train import cross_entropy, load_train_config, train

GRADCHECK_PARAM_LIMIT = 50_000
GRADCHECK_TOL = 1e-4


def _write_manifest(out_dir, command: str, payload: dict):
    os.makedirs(out_dir, exist_ok=True)
    doc = {"command": command,
           "threads": int(os.environ.get("EIT_THREADS", "1")), **payload}
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)


def _apply_overrides(config, args):
    if getattr(args, "image", None):
        h, w = (int(v) for v in args.image.lower().split("x"))
        config = dataclasses.replace(config, image=(h, w, 3))
    if getattr(args, "classes", None):
        config = dataclasses.replace(config, classes=args.classes)
    return config


def cmd_describe(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    sched = schedule_for(config)
    report = costs.cost_report(config)
    h0, w0 = config.token_grid()
    vit_like = config.split_policy == "none" and \
        config.eitp.stride == config.eitp.kernel and config.eitp.pool == 1
    print(f"model: C={config.channels} L={config.layers} h={config.heads} "
          f"classes={config.classes} image={config.image[0]}x{config.image[1]}"
          + ("  [ViT-equivalent geometry]" if vit_like else ""))
    print(f"tokens: {config.token_count()} (grid {h0}x{w0} + class token), "
          f"pixel spacing {config.pixel_spacing()}")
    print(f"split policy: {config.split_policy}")
    print("layer   conv_ch  attn_ch")
    for i, (ct, cm) in enumerate(zip(sched.conv, sched.attn), start=1):
        print(f"{i:5d}  {ct:8d} {cm:8d}")
    print(f"{'component':12s} {'params':>12s} {'MACs':>16s} {'FLOPs(2xMAC)':>16s}")
    for name, cost in report.components.items():
        print(f"{name:12s} {cost.params:12d} {cost.macs:16d} {cost.flops:16d}")
    print(f"{'total':12s} {report.total_params:12d} {report.total_macs:16d} "
          f"{report.total_flops:16d}")
    print(f"convention: {report.flop_convention}")

    doc = {"config": config_to_dict(config),
           "schedule": {"conv": list(sched.conv), "attn": list(sched.attn)},
           "tokens": config.token_count(),
           "vit_equivalent_geometry": vit_like,
           "flop_convention": report.flop_convention,
           "components": {name: {"params": c.params, "macs": c.macs,
                                 "flops": c.flops}
                          for name, c in report.components.items()},
           "totals": {"params": report.total_params,
                      "macs": report.total_macs,
                      "flops": report.total_flops}}
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "costs.json"), "w") as f:
        json.dump(doc, f, indent=2)
    _write_manifest(args.out, "describe", {"config": config_to_dict(config),
                                           "seed": None})
    return 0


def cmd_gradcheck(args) -> int:
    config = load_config(args.config)
    total = costs.count_params(config).total_params
    if total > GRADCHECK_PARAM_LIMIT:
        print(f"error: config has {total} parameters; finite differences are "
              f"only tractable up to {GRADCHECK_PARAM_LIMIT}. Use a micro "
              f"config (small channels/layers/image).", file=sys.stderr)
        return 1
    rng = np.random.default_rng(args.seed)
    params = init_params(config, args.seed)
    h, w, _ = config.image
    images = rng.random((1, 3, h, w))
    label = np.array([args.seed % config.classes])

    def f():
        return cross_entropy(forward(images, params, config), label)

    report = gradcheck(f, params, step=args.step)
    name, err = worst_offender(report)
    passed = err <= GRADCHECK_TOL
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "gradcheck.json"), "w") as f_:
        json.dump({"tolerance": GRADCHECK_TOL, "step": args.step,
                   "passed": passed, "worst": {"param": name, "error": err},
                   "max_relative_error": report}, f_, indent=2)
    _write_manifest(args.out, "gradcheck", {"config": config_to_dict(config),
                                            "seed": args.seed})
    if passed:
        print(f"gradcheck passed: worst {name} rel err {err:.3e} "
              f"(tol {GRADCHECK_TOL:g})")
        return 0
    print(f"gradcheck FAILED: {name} rel err {err:.3e} > {GRADCHECK_TOL:g}",
          file=sys.stderr)
    return 2


def cmd_train(args) -> int:
    config = load_config(args.config)
    tconfig = load_train_config(args.train_config)
    if not os.path.isdir(args.data):
        print(f"error: data directory not found: {args.data}", file=sys.stderr)
        return 1
    dataset = load_dataset(args.data)
    train(config, tconfig, dataset, out_dir=args.out)
    _write_manifest(args.out, "train",
                    {"config": config_to_dict(config),
                     "train_config": dataclasses.asdict(tconfig),
                     "data": args.data, "seed": tconfig.seed})
    print(f"wrote {os.path.join(args.out, 'model.ckpt')} and metrics.csv")
    return 0


def cmd_probe(args) -> int:
    params, config = checkpoint.load(args.checkpoint)
    if not os.path.isdir(args.data):
        print(f"error: data directory not found: {args.data}", file=sys.stderr)
        return 1
    dataset = load_dataset(args.data)
    m = min(args.samples, len(dataset))
    h0, w0 = config.token_grid()
    spacing = config.pixel_spacing()

    per_layer_records: dict[int, list[probes.ProbeRecord]] = \
        {i: [] for i in range(config.layers)}
    for lo in range(0, m, args.batch_size):
        images = dataset.images[lo:lo + args.batch_size]
        _, layer_probes = forward(images, params, config, collect_probes=True)
        for rec in layer_probes:
            for j in range(len(images)):
                per_layer_records[rec["layer"]].append(probes.ProbeRecord(
                    rec["layer"], rec["attention"][j], rec["input"][j],
                    (h0, w0), spacing))

    distances = {i: probes.mean_distances(recs)
                 for i, recs in per_layer_records.items()}
    diversity = {i: probes.head_diversity(d) for i, d in distances.items()}
    spectrum = {i: np.mean([probes.frequency_share(r, args.bins)
                            for r in recs], axis=0)
                for i, recs in per_layer_records.items()}

    os.makedirs(args.out, exist_ok=True)
    probes.write_distances_csv(os.path.join(args.out, "distances.csv"), distances)
    probes.write_diversity_csv(os.path.join(args.out, "diversity.csv"), diversity)
    probes.write_spectrum_csv(os.path.join(args.out, "spectrum.csv"), spectrum)
    maps_dir = os.path.join(args.out, "maps")
    os.makedirs(maps_dir, exist_ok=True)
    query = 1 + (h0 // 2) * w0 + w0 // 2  # center patch token
    for i, recs in per_layer_records.items():
        amap, _ = probes.attention_map(recs[0], query)
        probes.write_pgm(os.path.join(maps_dir, f"layer_{i}.pgm"), amap)
    _write_manifest(args.out, "probe",
                    {"config": config_to_dict(config), "seed": None,
                     "checkpoint": args.checkpoint, "samples": m,
                     "bins": args.bins, "query": query})
    print(f"probed {m} samples across {config.layers} layers -> {args.out}")
    return 0


def cmd_gen_data(args) -> int:
    dataset = generate_synthetic(args.n, args.size, args.seed, args.cutoff)
    save_dataset(dataset, args.out)
    _write_manifest(args.out, "gen-data",
                    {"config": {"n": args.n, "size": args.size,
                                "cutoff": args.cutoff}, "seed": args.seed})
    print(f"wrote {args.n} samples ({args.size}x{args.size}) to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eit", description="Channel-split vision transformer toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("describe", help="print schedule, params and FLOPs")
    p.add_argument("--config", required=True)
    p.add_argument("--image", help="override image size, e.g. 224x224")
    p.add_argument("--classes", type=int, help="override class count")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("gradcheck", help="finite-difference check of a micro model")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="train a toy model")
    p.add_argument("--config", required=True)
    p.add_argument("--train-config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("probe", help="attention/spectrum diagnostics of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=probes.DEFAULT_BINS)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("gen-data", help="generate the synthetic two-class dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cutoff", type=float, default=0.15)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2
    except (EitError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
