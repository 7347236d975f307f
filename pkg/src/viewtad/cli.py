"""Batch command-line front end.

Subcommands: generate, train, extract-features, eval, infer, plot,
bench-scan. Every run echoes its fully-resolved configuration as one JSON
line before doing work; configuration comes from an optional JSON file
(``--config``) with command-line flags taking precedence. Failures exit
nonzero with a single ``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import bench, data, pipeline, scan
from .encoder import WindowEncoderConfig
from .evaluation import (
    load_segments_jsonl,
    save_segments_jsonl,
)
from .geometry import RigSpec
from .pipeline import TrainConfig
from .temporal import TemporalEncoderConfig


def _add_dataclass_flags(parser, prefix, cls, skip=()):
    for f in fields(cls):
        if f.name in skip:
            continue
        flag = f"--{f.name.replace('_', '-')}"
        if f.type in ("bool", bool):
            parser.add_argument(flag, action="store_true", default=None, dest=f"{prefix}{f.name}")
        else:
            parser.add_argument(flag, type=str, default=None, dest=f"{prefix}{f.name}")


def _resolve(cls, file_section: dict, cli_values: dict, **forced):
    """Dataclass from defaults <- config file <- CLI flags <- forced keys."""
    allowed = {f.name for f in fields(cls)}
    unknown = set(file_section) - allowed
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys in config file: {sorted(unknown)}")
    merged = dict(file_section)
    for key, raw in cli_values.items():
        if raw is None:
            continue
        merged[key] = raw
    merged.update(forced)
    coerced = {}
    for f in fields(cls):
        if f.name not in merged:
            continue
        val = merged[f.name]
        if isinstance(val, str):
            if f.name == "scales":
                val = tuple(int(s) for s in val.split(","))
            elif f.type in ("int", int):
                val = int(val)
            elif f.type in ("float", float):
                val = float(val)
            elif f.type in ("bool", bool):
                val = val.lower() in ("1", "true", "yes")
            elif f.name == "class_loss_weights":
                val = [float(x) for x in val.split(",")]
        coerced[f.name] = val
    return cls(**coerced)


def _collect(args, prefix):
    return {
        key[len(prefix):]: val
        for key, val in vars(args).items()
        if key.startswith(prefix)
    }


def _load_config_file(path):
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _echo(command, **sections):
    resolved = {"command": command}
    for name, cfg in sections.items():
        resolved[name] = asdict(cfg) if hasattr(cfg, "__dataclass_fields__") else cfg
    print(json.dumps({"resolved_config": resolved}, sort_keys=True))


def cmd_generate(args):
    cfgfile = _load_config_file(args.config)
    n_total = args.sequences
    n_val, n_test = args.val, args.test
    if n_val + n_test >= n_total:
        raise ValueError("val+test must leave at least one training sequence")
    settings = {
        "seed": args.seed,
        "num_classes": args.classes,
        "n_train": n_total - n_val - n_test,
        "n_val": n_val,
        "n_test": n_test,
        "frames_per_sequence": args.frames,
        "num_joints": args.joints,
        "fps": args.fps,
    }
    settings.update(cfgfile.get("generate", {}))
    _echo("generate", generate=settings, out=str(args.out))
    manifest = data.generate_dataset(args.out, **settings)
    total = sum(len(v) for v in manifest.splits.values())
    print(f"wrote {total} sequences and manifest.json to {args.out}")


def cmd_train(args):
    manifest = data.load_manifest(args.data)
    ds_hash = data.manifest_hash(args.data)
    num_classes = manifest.num_classes
    cfgfile = _load_config_file(args.config)
    train_cfg = _resolve(
        TrainConfig, cfgfile.get("train", {}), _collect(args, "train_"), stage=args.stage
    )
    rig = _resolve(RigSpec, cfgfile.get("rig", {}), _collect(args, "rig_"), num_views=train_cfg.views)
    if args.stage == 1:
        enc_cfg = _resolve(
            WindowEncoderConfig, cfgfile.get("encoder", {}), _collect(args, "enc_"),
            num_classes=num_classes + 1,
        )
        _echo("train", train=train_cfg, encoder=enc_cfg, rig=rig)
        ckpt = pipeline.train_stage1(train_cfg, enc_cfg, manifest, args.out, rig, ds_hash)
    else:
        if not args.stage1_ckpt:
            raise ValueError("missing required artifact: --stage1-ckpt (train stage 1 first)")
        from .checkpoint import load_checkpoint

        _, enc_meta = load_checkpoint(args.stage1_ckpt)
        feature_dim = enc_meta["encoder_config"]["feature_dim"]
        tmp_cfg = _resolve(
            TemporalEncoderConfig, cfgfile.get("temporal", {}), _collect(args, "tmp_"),
            in_channels=feature_dim, num_classes=num_classes,
        )
        _echo("train", train=train_cfg, temporal=tmp_cfg, rig=rig)
        ckpt = pipeline.train_stage2(
            train_cfg, tmp_cfg, manifest, args.stage1_ckpt, args.out, rig, ds_hash
        )
    print(f"checkpoint written to {ckpt}")


def cmd_extract_features(args):
    manifest = data.load_manifest(args.data)
    encoder, enc_meta = pipeline.load_encoder(args.stage1_ckpt)
    encoder.freeze()
    rig_meta = enc_meta.get("rig", {})
    rig = RigSpec(
        args.views, rig_meta.get("spacing_deg", 30.0), rig_meta.get("radius", 3.0),
        rig_meta.get("height", 0.0), rig_meta.get("focal", 1.0), rig_meta.get("margin", 0.0),
    )
    _echo("extract-features", rig=rig, stride=args.stride, window_len=args.window_len)
    count = 0
    for split in manifest.splits:
        for seq in manifest.sequences(split):
            pipeline.get_feature_grid(seq, encoder, rig, args.window_len, args.stride, args.out)
            count += 1
    print(f"extracted {count} feature grids to {args.out}")


def cmd_eval(args):
    manifest = data.load_manifest(args.data)
    thresholds = tuple(float(t) for t in args.thresholds.split(","))
    _echo(
        "eval", views=args.views, split=args.split, thresholds=list(thresholds),
        prob_threshold=args.prob_threshold,
    )
    report, dets, gts = pipeline.run_eval(
        args.stage1_ckpt, args.stage2_ckpt, manifest, args.split, args.views,
        thresholds, args.prob_threshold, args.features,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    report.write_csv(out / "report.csv")
    save_segments_jsonl(out / "detections.jsonl", dets)
    save_segments_jsonl(out / "gt.jsonl", gts)
    for thr in thresholds:
        print(f"mAP@{thr:g}: {report.mean_ap[thr]:.4f}")
    print(f"report written to {out}")


def cmd_infer(args):
    manifest = data.load_manifest(args.data)
    encoder, _ = pipeline.load_encoder(args.stage1_ckpt)
    encoder.freeze()
    model, meta = pipeline.load_temporal(args.stage2_ckpt)
    tc = meta["train_config"]
    names = {s.name: s for split in manifest.splits for s in manifest.sequences(split)}
    if args.seq not in names:
        raise ValueError(f"unknown sequence {args.seq!r}; choices: {sorted(names)}")
    seq = names[args.seq]
    _echo("infer", seq=args.seq, views=args.views)
    probs = pipeline.infer(
        seq, encoder, model, args.views, tc["window_len"], tc["window_stride"],
        cache_dir=args.features,
    )
    payload = {"seq": seq.name, "classes": manifest.classes, "probs": probs.tolist()}
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(payload))
    if args.detections:
        from .evaluation import extract_segments

        save_segments_jsonl(
            args.detections, extract_segments(probs, args.prob_threshold, seq.name)
        )
    print(f"probabilities written to {args.out}")


def cmd_plot(args):
    gt = load_segments_jsonl(args.gt)
    dets = load_segments_jsonl(args.detections) if args.detections else []
    seq = args.seq or (gt[0].sequence if gt else "")
    gt = [s for s in gt if s.sequence == seq]
    dets = [s for s in dets if s.sequence == seq]
    names = []
    if args.data:
        names = data.load_manifest(args.data).classes
    num_windows = args.windows or max(
        [s.end for s in gt + dets], default=1
    )
    _echo("plot", seq=seq, windows=num_windows)
    from .plotting import write_timeline_svg

    write_timeline_svg(args.out, gt, dets, num_windows, names, title=seq)
    print(f"timeline written to {args.out}")


def cmd_bench_scan(args):
    lengths = tuple(int(x) for x in args.lengths.split(","))
    backends = args.backends.split(",") if args.backends else None
    _echo(
        "bench-scan", lengths=list(lengths), channels=args.channels,
        state_dim=args.state_dim, trials=args.trials,
        backends=backends or scan.available_backends(),
    )
    rows = bench.bench_scan(lengths, args.channels, args.state_dim, args.trials, backends, args.seed)
    for row in rows:
        print(
            f"{row['backend']:>7} L={row['length']:>6} median {row['median_ms']:8.2f} ms"
        )
    if args.out:
        bench.write_csv(args.out, rows)
        print(f"csv written to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="viewtad", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--sequences", type=int, default=10, help="total sequence count")
    p.add_argument("--val", type=int, default=0, help="sequences held out for validation")
    p.add_argument("--test", type=int, default=0, help="sequences held out for testing")
    p.add_argument("--frames", type=int, default=384)
    p.add_argument("--joints", type=int, default=15)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--config")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train stage 1 (windows) or stage 2 (sequences)")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--data", required=True, help="dataset manifest.json")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--stage1-ckpt", help="frozen encoder checkpoint (stage 2)")
    p.add_argument("--config", help="JSON config file; flags override it")
    _add_dataclass_flags(p, "train_", TrainConfig, skip=("stage", "class_loss_weights"))
    p.add_argument("--class-loss-weights", dest="train_class_loss_weights")
    _add_dataclass_flags(p, "enc_", WindowEncoderConfig, skip=("num_classes", "temporal_kernel"))
    p.add_argument("--enc-temporal-kernel", dest="enc_temporal_kernel")
    _add_dataclass_flags(
        p, "tmp_", TemporalEncoderConfig, skip=("num_classes", "in_channels", "temporal_kernel")
    )
    p.add_argument("--tmp-temporal-kernel", dest="tmp_temporal_kernel")
    _add_dataclass_flags(p, "rig_", RigSpec, skip=("num_views",))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract-features", help="cache frozen-encoder feature grids")
    p.add_argument("--stage1-ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="cache directory")
    p.add_argument("--views", type=int, default=12)
    p.add_argument("--window-len", type=int, default=16)
    p.add_argument("--stride", type=int, default=16)
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("eval", help="evaluate detections on a split")
    p.add_argument("--stage1-ckpt", required=True)
    p.add_argument("--stage2-ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--views", type=int, default=1)
    p.add_argument("--thresholds", default="0.1,0.3,0.5")
    p.add_argument("--prob-threshold", type=float, default=0.5)
    p.add_argument("--features", help="optional feature grid cache directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="per-window probabilities for one sequence")
    p.add_argument("--stage1-ckpt", required=True)
    p.add_argument("--stage2-ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seq", required=True)
    p.add_argument("--views", type=int, default=1)
    p.add_argument("--out", required=True, help="probabilities JSON path")
    p.add_argument("--detections", help="optional detections JSONL path")
    p.add_argument("--prob-threshold", type=float, default=0.5)
    p.add_argument("--features", help="optional feature grid cache directory")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("plot", help="SVG timeline of GT and predicted segments")
    p.add_argument("--gt", required=True, help="ground truth JSONL")
    p.add_argument("--detections", help="detections JSONL")
    p.add_argument("--out", required=True, help="output .svg path")
    p.add_argument("--seq", help="sequence to plot (default: first in GT)")
    p.add_argument("--windows", type=int, help="timeline length in windows")
    p.add_argument("--data", help="manifest for class names")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("bench-scan", help="selective-scan scaling benchmark")
    p.add_argument("--lengths", default="512,1024,2048,4096")
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--state-dim", type=int, default=16)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--backends", help="comma list; default: all available")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_bench_scan)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except BrokenPipeError:
        raise
    except Exception as exc:  # single parsable line, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
