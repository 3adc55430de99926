"""Command-line entry point: ``settlement-ccf {train,predict,crosseval,synth}``.

Exit codes: 0 success, 2 configuration/input error, 3 model/data
incompatibility, 4 numerical failure. ``SETTLEMENT_CCF_THREADS`` sets the
default worker count for ``--threads``.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .errors import InputError
from .pipeline import (
    EXIT_INPUT,
    EXIT_OK,
    StageError,
    load_config,
    run_crosseval,
    run_predict,
    run_synth,
    run_train,
)

log = logging.getLogger("settlement_ccf")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="settlement-ccf",
        description="Map informal settlements with canonical correlation forests.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train on one region and evaluate the 20%% hold-out")
    train.add_argument("--config", required=True, help="YAML run definition")
    train.add_argument("--seed", type=int)
    train.add_argument("--trees", type=int, help="number of trees (default 10)")
    train.add_argument("--out", help="output directory (overrides config)")
    train.add_argument("--threads", type=int, help="worker processes; -1 for all cores")

    predict = sub.add_parser("predict", help="write a binary settlement map for a raster")
    predict.add_argument("--model", required=True)
    predict.add_argument("--raster", required=True, help="raster container directory")
    predict.add_argument("--out", required=True, help="output PGM path")

    cross = sub.add_parser("crosseval", help="evaluate every model on every region")
    cross.add_argument("--models", nargs="+", required=True)
    cross.add_argument("--datasets", nargs="+", required=True, help="YAML region configs")
    cross.add_argument("--out", required=True)
    cross.add_argument("--seed", type=int, help="override the datasets' sampling seed")

    synth = sub.add_parser("synth", help="generate a synthetic scene")
    synth.add_argument("--config", required=True, help="YAML scene spec")
    synth.add_argument("--out", required=True)
    synth.add_argument("--seed", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "train":
            try:
                config = load_config(args.config, seed=args.seed, trees=args.trees, out=args.out)
            except (InputError, OSError) as exc:
                raise StageError("config", exc, EXIT_INPUT) from exc
            result = run_train(config, n_jobs=args.threads)
            print(f"model: {result.model_path}")
            print(f"pixel_accuracy: {result.report.pixel_accuracy:.4f}  "
                  f"mean_iou: {result.report.mean_iou:.4f}")
        elif args.command == "predict":
            class_map = run_predict(args.model, args.raster, args.out)
            print(f"map: {args.out}  informal_fraction: {class_map.classes.mean():.4f}  "
                  f"nodata: {class_map.nodata_count}")
        elif args.command == "crosseval":
            grid = run_crosseval(args.models, args.datasets, args.out, seed=args.seed)
            failed = sum(not hasattr(c, "pixel_accuracy") for row in grid.values() for c in row.values())
            if failed:
                log.warning("%d cell(s) could not be evaluated; see ERROR markers", failed)
            print(f"tables: {args.out}")
        elif args.command == "synth":
            run_synth(args.config, args.out, seed=args.seed)
            print(f"scene: {args.out}")
    except StageError as exc:
        log.error("%s", exc)
        return exc.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
