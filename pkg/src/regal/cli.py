"""Command-line front end: gen, partition, run, eval, ablate.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import dataio, experiment, metrics, model, superpixel


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset directory")
    gen.add_argument("--out", required=True)
    gen.add_argument("--count", type=int, default=10)
    gen.add_argument("--width", type=int, default=128)
    gen.add_argument("--height", type=int, default=128)
    gen.add_argument("--classes", type=int, default=6)
    gen.add_argument("--sites", type=int, default=25)
    gen.add_argument("--noise", type=float, default=0.05)
    gen.add_argument("--skew", type=float, default=1.3)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--prefix", default="img_")

    part = sub.add_parser("partition", help="partition images and dump regions/adjacency")
    part.add_argument("--images", required=True)
    part.add_argument("--out", required=True)
    part.add_argument("--partitioner", choices=experiment.PARTITIONERS, default="slic")
    part.add_argument("--target-size", type=int, default=16)
    part.add_argument("--compactness", type=float, default=10.0)
    part.add_argument("--iterations", type=int, default=10)

    run = sub.add_parser("run", help="run the active-learning protocol")
    _add_config_flags(run)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--images", required=True)
    ev.add_argument("--masks", required=True)

    abl = sub.add_parser("ablate", help="run the component-contribution grid")
    _add_config_flags(abl)
    abl.add_argument("--variants", default="a,b,c,d,e")
    return parser


def _add_config_flags(cmd: argparse.ArgumentParser) -> None:
    cmd.add_argument("--config", help="flat key = value config file")
    cmd.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override any config field")
    cmd.add_argument("--rounds", type=int)
    cmd.add_argument("--budget", type=int)
    cmd.add_argument("--mode", choices=("dominant", "multiclass"))
    cmd.add_argument("--sampler", choices=("random", "margin", "bvsb", "classbal", "pixbal"))
    cmd.add_argument("--nu", type=float)
    cmd.add_argument("--seed", type=int)
    cmd.add_argument("--seeds", help="comma-separated trial seeds")
    cmd.add_argument("--out", help="output directory for CSVs, logs, checkpoints")
    cmd.add_argument("--dump-scores", action="store_true")


def _config_from_args(args: argparse.Namespace) -> experiment.ExperimentConfig:
    pairs: dict[str, str] = {}
    if args.config:
        pairs.update(experiment.parse_config_file(args.config))
    for item in args.set:
        if "=" not in item:
            raise experiment.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value.strip()
    for key, attr in (
        ("rounds", "rounds"), ("budget", "budget"), ("mode", "mode"),
        ("sampler", "sampler"), ("nu", "nu"), ("seed", "seed"),
        ("seeds", "seeds"), ("out_dir", "out"),
    ):
        value = getattr(args, attr)
        if value is not None:
            pairs[key] = str(value)
    if args.dump_scores:
        pairs["dump_scores"] = "true"
    return experiment.config_from_pairs(pairs)


def cmd_gen(args) -> int:
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    spec = dataio.SyntheticSpec(
        width=args.width,
        height=args.height,
        class_count=args.classes,
        site_count=args.sites,
        noise_std=args.noise,
        class_frequency_skew=args.skew,
    )
    for i in range(args.count):
        image, mask = dataio.generate_synthetic(spec, args.seed + i)
        stem = f"{args.prefix}{i:04d}"
        dataio.write_ppm(out / "images" / f"{stem}.ppm", image)
        dataio.write_pgm(out / "masks" / f"{stem}.pgm", mask)
    dataio.write_manifest(out, args.classes)
    dataio.write_manifest(out / "masks", args.classes)
    print(f"wrote {args.count} image/mask pairs to {out}")
    return 0


def cmd_partition(args) -> int:
    image_dir = Path(args.images)
    if not image_dir.is_dir():
        raise experiment.ConfigError(f"missing directory: {image_dir}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in sorted(image_dir.glob("*.ppm")):
        image = dataio.read_ppm(path)
        if args.partitioner == "grid":
            part = superpixel.grid_partition(image, args.target_size)
        else:
            part = superpixel.slic_partition(
                image, args.target_size, args.compactness, args.iterations
            )
        superpixel.write_partition_pgm(part, out / f"{path.stem}.regions.pgm")
        superpixel.write_adjacency_jsonl(
            superpixel.region_adjacency(part), out / f"{path.stem}.adjacency.jsonl"
        )
        print(f"{path.stem}: {part.region_count} regions")
    return 0


def cmd_run(args) -> int:
    config = _config_from_args(args)
    per_seed = experiment.run_experiment(config)
    for seed, reports in zip(config.trial_seeds(), per_seed):
        final = reports[-1]
        print(
            f"seed {seed}: final mIoU {100 * final.miou:.2f} "
            f"({final.cum_clicks} clicks over {len(reports)} rounds)"
        )
    if len(per_seed) > 1:
        print(f"mean final mIoU {experiment.final_miou(per_seed):.2f}")
    return 0


def cmd_eval(args) -> int:
    params = model.load_checkpoint(args.checkpoint)
    pairs = dataio.load_dataset(args.images, args.masks)
    if not pairs:
        raise experiment.ConfigError("empty dataset")
    class_count = dataio.read_manifest(args.masks)
    preds = [
        model.predict_labels(model.featurize(img).reshape(-1, model.FEATURE_DIM), params)
        for img, _ in pairs
    ]
    score, per_class = metrics.miou_dataset(preds, [m for _, m in pairs], class_count)
    print(f"mIoU {100 * score:.2f}")
    for k, value in enumerate(per_class):
        shown = "absent" if np.isnan(value) else f"{100 * value:.2f}"
        print(f"  class {k}: {shown}")
    return 0


def cmd_ablate(args) -> int:
    config = _config_from_args(args)
    variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
    results = experiment.run_ablation(config, variants)
    for name, per_seed in results.items():
        print(
            f"variant {name}: avg mIoU {experiment.average_miou(per_seed):.2f}, "
            f"final {experiment.final_miou(per_seed):.2f}"
        )
    return 0


_COMMANDS = {
    "gen": cmd_gen,
    "partition": cmd_partition,
    "run": cmd_run,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (experiment.ConfigError, dataio.DataError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
