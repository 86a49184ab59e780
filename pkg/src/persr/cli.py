"""Command-line interface.

Exit codes: 0 success, 2 configuration or usage error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import sys

from . import __version__, driver
from .config import ConfigError, RunConfig, apply_overrides, load_config
from .image import ImageError
from .metrics import MetricError
from .training import TrainingError

_GRIDS = ("eq10", "losses", "multipass")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE",
                        help="run config (key = value under [model]/[run]/[data]/[io])")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable, wins over --config")
    parser.add_argument("--out-dir", metavar="DIR",
                        help="shorthand for --set out_dir=DIR")
    parser.add_argument("--seed", type=int, metavar="N",
                        help="shorthand for --set seed=N")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="persr",
        description="Perceptual 4x super-resolution: training, inference, and "
                    "quality reporting.")
    parser.add_argument("--version", action="version", version=f"persr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("pretrain", help="reconstruction-only generator training")
    _add_common(p)

    p = sub.add_parser("train-predictor", help="train one quality-score predictor")
    _add_common(p)
    p.add_argument("--kind", required=True, choices=("aesthetic", "subjective"))

    p = sub.add_parser("train-perceptual",
                       help="adversarial + score-guided fine-tuning")
    _add_common(p)

    p = sub.add_parser("upscale", help="upscale one image 4x")
    _add_common(p)
    p.add_argument("--in", dest="input", required=True, metavar="IMAGE")
    p.add_argument("--path", choices=driver.UPSCALE_PATHS, default="x4",
                   help="which generator route produces the 4x output")
    p.add_argument("--out", metavar="PNG",
                   help="output file (default: <out_dir>/<stem>_<path>.png)")
    p.add_argument("--checkpoint", metavar="FILE",
                   help="generator checkpoint (default: perceptual, then "
                        "pretrain, from out_dir)")

    p = sub.add_parser("evaluate", help="score SR outputs against ground truth")
    _add_common(p)
    p.add_argument("--gt", required=True, metavar="DIR")
    p.add_argument("--sr", required=True, metavar="DIR")
    p.add_argument("--sr-scores", metavar="FILE",
                   help="per-image subjective scores as 'name,score' lines")
    p.add_argument("--pristine", metavar="FILE",
                   help="pristine statistics file enabling the no-reference column")

    p = sub.add_parser("fit-pristine",
                       help="fit pristine image statistics for the no-reference metric")
    _add_common(p)
    p.add_argument("--corpus", metavar="SOURCE",
                   help="image dir, manifest, or synthetic:<seed>:<count> "
                        "(default: the config dataset)")

    p = sub.add_parser("ablate", help="run one ablation grid end to end")
    _add_common(p)
    p.add_argument("--grid", required=True, choices=_GRIDS)

    return parser


def _resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = list(args.set)
    if args.out_dir is not None:
        overrides.append(f"out_dir={args.out_dir}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return apply_overrides(config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _resolve_config(args)
    except ConfigError as err:
        print(f"persr: config error: {err}", file=sys.stderr)
        return 2
    try:
        if args.command == "pretrain":
            driver.run_pretrain(config)
        elif args.command == "train-predictor":
            driver.run_train_predictor(config, args.kind)
        elif args.command == "train-perceptual":
            driver.run_perceptual(config)
        elif args.command == "upscale":
            driver.run_upscale(config, args.input, args.path,
                               output_path=args.out, checkpoint=args.checkpoint)
        elif args.command == "evaluate":
            driver.run_evaluate(config, args.gt, args.sr,
                                sr_scores_path=args.sr_scores,
                                pristine_path=args.pristine)
        elif args.command == "fit-pristine":
            driver.run_fit_pristine(config, corpus=args.corpus)
        elif args.command == "ablate":
            driver.run_ablation(config, args.grid)
    except ConfigError as err:
        print(f"persr: config error: {err}", file=sys.stderr)
        return 2
    except (TrainingError, MetricError, ImageError, OSError, ValueError) as err:
        print(f"persr: error: {err}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
