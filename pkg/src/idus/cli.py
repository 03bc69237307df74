"""Command-line entry point: ``idus {gen,idus,baseline,eval}``.

Exit codes: 0 success, 2 usage/configuration error, 3 I/O error (missing or
mismatched inputs), 4 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import __version__
from .driver import RECIPES, IdusConfig, run_baseline, run_idus
from .evaluation import evaluate, render_report
from .features import WindowSpec
from .imagery import (
    SyntheticSpec,
    default_palette,
    generate_synthetic_dataset,
    load_dataset,
    load_label_image,
    read_manifest,
    save_image,
    save_label_image,
    write_manifest,
)
from .net import DivergenceError

log = logging.getLogger("idus")

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DIVERGED = 4


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def write_run_manifest(out: Path, command: str, config_path, seeds: dict, argv) -> Path:
    """Record what is needed to reproduce a command, before any heavy work starts."""
    out.mkdir(parents=True, exist_ok=True)
    lines = [
        f"command: {command}",
        f"config: {Path(config_path).resolve() if config_path else '-'}",
        f"seeds: {json.dumps(seeds, sort_keys=True)}",
        f"output: {out.resolve()}",
        f"version: {__version__}",
        f"argv: {' '.join(argv)}",
    ]
    path = out / "manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def _load_data(manifest):
    path = Path(manifest)
    if not path.is_file():
        raise CliError(f"dataset manifest not found: {path}", EXIT_IO)
    names_file = path.with_name("classes.txt")
    names = names_file.read_text().split() if names_file.exists() else None
    try:
        return load_dataset(path, class_names=names)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load dataset: {exc}", EXIT_IO) from exc


def write_outputs(out: Path, dataset, labels, num_classes, history=None):
    (out / "labels").mkdir(parents=True, exist_ok=True)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    palette = default_palette(num_classes)
    for im, lab in zip(dataset.images, labels):
        save_label_image(lab, out / "labels" / f"{im.id}.png", palette)
        gray = im.pixels[..., None] * 255.0
        overlay = 0.5 * gray + 0.5 * palette[lab].astype(np.float64)
        PILImage.fromarray(np.rint(overlay).astype(np.uint8), mode="RGB").save(
            out / "images" / f"{im.id}.png"
        )
    if history is not None:
        with open(out / "history.log", "w") as fh:
            for rec in history:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    summary = None
    if dataset.has_masks:
        cm, summary = evaluate(list(labels), dataset.masks, num_classes, dataset.class_names)
        render_report(cm, summary, out / "reports" / "confusion")
        print(f"mean per-class accuracy: {summary['mean_class_accuracy']:.4f}")
        print(f"overall pixel accuracy: {summary['overall_accuracy']:.4f}")
    return summary


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args, parser, argv):
    spec = SyntheticSpec(num_classes=args.classes, count=args.count, size=args.size, looks=args.looks)
    try:
        spec.validate()
    except ValueError as exc:
        parser.error(str(exc))
    out = Path(args.out)
    try:
        write_run_manifest(out, "gen", None, {"seed": args.seed}, argv)
        dataset = generate_synthetic_dataset(spec, args.seed)
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
        pairs = []
        palette = default_palette(spec.num_classes)
        for im, mk in zip(dataset.images, dataset.masks):
            img_path = out / "images" / f"{im.id}.pgm"
            mask_path = out / "masks" / f"{im.id}.png"
            save_image(im, img_path)
            save_label_image(mk.labels, mask_path, palette)
            pairs.append((img_path.resolve(), mask_path.resolve()))
        write_manifest(out.resolve() / "dataset.txt", pairs)
        (out / "classes.txt").write_text("\n".join(dataset.class_names) + "\n")
    except OSError as exc:
        raise CliError(f"cannot write dataset: {exc}", EXIT_IO) from exc
    print(f"wrote {len(dataset)} images to {out}")
    return 0


def cmd_idus(args, parser, argv):
    overrides = dict(
        num_classes=args.classes,
        update_labels_every=args.interval,
        update_boundaries_every=args.interval,
        outer_iterations=args.iterations,
        superpixels=args.superpixels,
        batch_size=args.batch_size,
        base_lr=args.lr,
    )
    if args.seed is not None:
        overrides.update(init_seed=args.seed, cluster_seed=args.seed + 1, net_seed=args.seed + 2)
    try:
        if args.config:
            cfg = IdusConfig.from_file(args.config, **overrides)
        else:
            cfg = IdusConfig.desk(**{k: v for k, v in overrides.items() if v is not None})
    except FileNotFoundError as exc:
        raise CliError(f"config file not found: {exc.filename}", EXIT_USAGE) from exc
    except (ValueError, TypeError) as exc:
        raise CliError(f"invalid configuration: {exc}", EXIT_USAGE) from exc
    dataset = _load_data(args.data)
    out = Path(args.out)
    seeds = {"init": cfg.init_seed, "cluster": cfg.cluster_seed, "net": cfg.net_seed}
    write_run_manifest(out, "idus", args.config, seeds, argv)
    (out / "config.txt").write_text(cfg.to_text())
    try:
        result = run_idus(dataset, cfg, checkpoint_dir=out / "checkpoints", resume=args.resume,
                          stop_after=args.stop_after)
    except DivergenceError as exc:
        ckpt = getattr(exc, "checkpoint", None)
        print(f"training diverged: {exc}; checkpoint: {ckpt}", file=sys.stderr)
        return EXIT_DIVERGED
    write_outputs(out, dataset, result.labels, cfg.num_classes, result.history)
    if not result.completed:
        print(f"stopped after epoch {result.epoch}; resume from {out / 'checkpoints' / 'last.ckpt'}")
    return 0


def cmd_baseline(args, parser, argv):
    if args.recipe not in RECIPES:
        parser.error(f"unknown recipe {args.recipe!r}; choose from {', '.join(RECIPES)}")
    dataset = _load_data(args.data)
    out = Path(args.out)
    write_run_manifest(out, f"baseline {args.recipe}", None, {"seed": args.seed}, argv)
    result = run_baseline(dataset, args.recipe, args.classes, args.superpixels, seed=args.seed,
                          restarts=args.restarts, window=WindowSpec(args.radius))
    print(f"feature dim: {result.feature_dim} ({result.kept_dim} after standardisation)")
    write_outputs(out, dataset, result.labels, args.classes)
    return 0


def cmd_eval(args, parser, argv):
    dataset = _load_data(args.data)
    if not dataset.has_masks:
        raise CliError("dataset manifest lists no ground-truth masks", EXIT_IO)
    pred_dir = Path(args.pred)
    if not pred_dir.is_dir():
        raise CliError(f"prediction directory not found: {pred_dir}", EXIT_IO)
    pred_ids = {p.stem: p for p in pred_dir.glob("*.png")}
    mask_ids = [im.id for im in dataset.images]
    missing = [i for i in mask_ids if i not in pred_ids]
    if missing:
        raise CliError(f"{len(missing)} image ids have no prediction (e.g. {missing[0]})", EXIT_IO)
    preds = [load_label_image(pred_ids[i]) for i in mask_ids]
    num_classes = args.classes or dataset.num_classes
    try:
        cm, summary = evaluate(preds, dataset.masks, num_classes, dataset.class_names[:num_classes])
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    out = Path(args.out)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    render_report(cm, summary, out / "reports" / "confusion")
    print(f"mean per-class accuracy: {summary['mean_class_accuracy']:.4f}")
    print(f"overall pixel accuracy: {summary['overall_accuracy']:.4f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="idus", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic seabed-texture dataset")
    p.add_argument("--classes", type=int, default=7, help="texture classes, 2..7")
    p.add_argument("--count", type=int, default=20, help="number of images")
    p.add_argument("--size", type=int, default=64, help="image side in pixels (>= 32)")
    p.add_argument("--looks", type=float, default=6.0, help="speckle looks (higher = less noise)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("idus", help="train IDUS and write label maps")
    p.add_argument("--data", required=True, help="dataset manifest (image mask pairs)")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int)
    p.add_argument("--interval", type=int, help="epochs between label/boundary updates")
    p.add_argument("--iterations", type=int, help="outer iterations")
    p.add_argument("--superpixels", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, help="base learning rate")
    p.add_argument("--seed", type=int, help="base seed for init/clustering/network")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--stop-after", type=int, help="stop after this epoch, leaving a checkpoint")
    p.set_defaults(func=cmd_idus)

    p = sub.add_parser("baseline", help="run a hand-crafted feature co-segmentation baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--recipe", required=True, help="glcm or zare (Sobel + HOG + LBP)")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=7)
    p.add_argument("--superpixels", type=int, default=100)
    p.add_argument("--restarts", type=int, default=100)
    p.add_argument("--radius", type=int, default=8, help="sliding-window radius")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="score existing label maps against ground truth")
    p.add_argument("--pred", required=True, help="directory of <id>.png label maps")
    p.add_argument("--data", required=True, help="dataset manifest with masks")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, parser, argv)
    except CliError as exc:
        print(f"idus: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
