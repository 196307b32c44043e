"""Command-line entry point: ``modseg segment|evaluate|render|sweep``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .backend.synthetic import SyntheticScene
from .config import RunConfig
from .errors import ModsegError, StageError, ValidationError
from .pipeline import load_archive, run_segment
from .protocols import (PROTOCOLS, VARIANTS, ProtocolInputs, evaluate_entries, evaluate_pixel_baseline,
                        load_array_dir, load_label_dir, write_reports)
from .render import render_overlay

log = logging.getLogger("modseg")

_TYPES = {"int": int, "float": float, "str": str, "str | None": str}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration (overrides --config)")
    g.add_argument("--config", type=Path, help="JSON run configuration file")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            g.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=argparse.SUPPRESS)
        else:
            g.add_argument(flag, dest=f.name, type=_TYPES[f.type], default=argparse.SUPPRESS,
                           metavar=f.name.upper(), help=f"default: {f.default}")


def _config(args) -> RunConfig:
    base = RunConfig.load(args.config).to_dict() if getattr(args, "config", None) else {}
    names = {f.name for f in dataclasses.fields(RunConfig)}
    base.update({k: v for k, v in vars(args).items() if k in names})
    return RunConfig.from_dict(base)


def _scene(args):
    return SyntheticScene.load(args.scene) if getattr(args, "scene", None) else None


def cmd_segment(args) -> int:
    config = _config(args)
    results = run_segment(args.inputs, config, scene=_scene(args))
    print(f"wrote {len(results)} image(s) to {config.output_dir}")
    return 0


def _protocol_inputs(args, ids) -> ProtocolInputs:
    names = None
    if args.class_names:
        names = [s.strip() for s in Path(args.class_names).read_text().splitlines() if s.strip()]
    return ProtocolInputs(
        ground_truth=load_label_dir(args.gt, set(ids)) if args.gt else None,
        num_classes=args.num_classes,
        class_names=names,
        pixel_embeddings=load_array_dir(args.pixel_embeddings, set(ids)) if args.pixel_embeddings else None,
        class_vectors=np.load(args.class_vectors).astype(np.float64) if args.class_vectors else None,
        ignore_label=args.ignore_label,
        seed=args.seed,
    )


def cmd_evaluate(args) -> int:
    entries = [e for root in args.archives for e in load_archive(root)]
    ids = [e.image_id for e in entries]
    inputs = _protocol_inputs(args, ids)
    reports = {}
    for protocol in args.protocol:
        for variant in args.variant:
            try:
                reports[f"{protocol}/{variant}"] = evaluate_entries(entries, protocol, inputs, variant)
            except ModsegError as exc:
                raise StageError(f"evaluate:{protocol}", exc) from exc
        if protocol == "openvocab":
            reports["openvocab/pixel"] = evaluate_pixel_baseline(ids, inputs)
    config = json.loads((Path(args.archives[0]) / "config.json").read_text())
    out = args.report or Path(args.archives[0]) / "metrics"
    write_reports(out, reports, config, inputs.class_names)
    print(Path(out).with_suffix(".txt").read_text(), end="")
    return 0


def cmd_render(args) -> int:
    for root in args.archives:
        config = json.loads((Path(root) / "config.json").read_text())
        seed = config["config"]["seed"]
        out = args.out or Path(root) / "figures"
        for entry in load_archive(root):
            render_overlay(entry, out, seed=seed)
    return 0


def _parse_value(name: str, text: str):
    kind = next(f.type for f in dataclasses.fields(RunConfig) if f.name == name)
    if kind == "bool":
        return text.lower() in ("1", "true", "yes", "on")
    return _TYPES[kind](text)


def cmd_sweep(args) -> int:
    config = _config(args)
    names = {f.name for f in dataclasses.fields(RunConfig)}
    if args.param not in names:
        raise ValidationError(f"unknown sweep parameter {args.param!r}")
    summary = {}
    for text in args.values:
        value = _parse_value(args.param, text)
        out = Path(config.output_dir) / f"{args.param}={value}"
        cfg = config.replace(**{args.param: value, "output_dir": str(out)})
        run_segment(args.inputs, cfg, scene=_scene(args))
        if args.gt:
            entries = load_archive(out)
            inputs = ProtocolInputs(ground_truth=load_label_dir(args.gt), seed=cfg.seed)
            reports = {p: evaluate_entries(entries, p, inputs) for p in ("traditional", "modified")}
            write_reports(out / "metrics", reports, cfg.semantic_dict())
            summary[text] = {p: r.miou for p, r in reports.items()}
        print(f"{args.param}={value}: {out}" + (f"  {summary[text]}" if text in summary else ""))
    if summary:
        Path(config.output_dir, "sweep.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="modseg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="segment images or synthetic scene files")
    p.add_argument("inputs", nargs="+", type=Path)
    p.add_argument("--scene", type=Path, help="scene file backing image inputs on the synthetic backend")
    _add_config_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("evaluate", help="score run archives against ground truth")
    p.add_argument("archives", nargs="+", type=Path)
    p.add_argument("--protocol", nargs="+", choices=PROTOCOLS, default=["traditional", "modified"])
    p.add_argument("--variant", nargs="+", choices=VARIANTS, default=["ours", "naive"])
    p.add_argument("--gt", type=Path, help="directory of <image id>.png/.npy label maps")
    p.add_argument("--num-classes", type=int)
    p.add_argument("--class-names", type=Path, help="text file, one class name per line")
    p.add_argument("--pixel-embeddings", type=Path, help="directory of <image id>.npy H x W x d fields")
    p.add_argument("--class-vectors", type=Path, help=".npy float32 array, one text vector per class")
    p.add_argument("--ignore-label", type=int, default=255)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", type=Path, help="output path stem (default <archive>/metrics)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", help="write overlay and naive-vs-ours figures")
    p.add_argument("archives", nargs="+", type=Path)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("sweep", help="segment once per value of one config key")
    p.add_argument("inputs", nargs="+", type=Path)
    p.add_argument("--param", default="K")
    p.add_argument("--values", nargs="+", default=["10", "20", "30", "40"])
    p.add_argument("--scene", type=Path)
    p.add_argument("--gt", type=Path, help="evaluate each run against these labels")
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"modseg {args.command}: error {exc}", file=sys.stderr)
        return 2
    except (ModsegError, OSError, KeyError, ValueError) as exc:
        print(f"modseg {args.command}: error [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
