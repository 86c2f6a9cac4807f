"""Command-line surface for corpus generation, training, and evaluation.

Commands: generate, train, tune, apply, evaluate, matrix, sweep-lambda,
confusion.  Every command accepts --config, --seed, --out, and repeatable
--set section.key=value overrides (command line wins over the file).
Exit codes: 0 success, 1 validation/usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import VALIDATION_ERRORS, DavadError, UsageError
from . import experiments

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise UsageError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="INI experiment config")
    parser.add_argument("--seed", type=int, default=None, help="seed for generation and training")
    parser.add_argument("--out", type=Path, default=None, help="output directory")
    parser.add_argument("--manifest", type=Path, default=None, help="corpus manifest path")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override any config value (repeatable)",
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="davad", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate the synthetic multi-domain corpus")
    _add_common(p)

    p = sub.add_parser("train", help="train a model on the manifest's train split")
    _add_common(p)

    p = sub.add_parser("tune", help="select epoch and threshold on the dev split")
    _add_common(p)
    p.add_argument("--run", type=Path, default=None, help="training run directory (default: --out)")

    p = sub.add_parser("apply", help="apply a checkpoint to a split")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p.add_argument("--sigma", type=float, default=None, help="decision threshold override")
    p.add_argument("--dump-scores", action="store_true", help="also write per-frame scores")

    p = sub.add_parser("evaluate", help="score hypothesis segments against the reference")
    _add_common(p)
    p.add_argument("--hyp", type=Path, required=True, help="directory of hypothesis segment files")
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))

    p = sub.add_parser("matrix", help="run the domain-policy experiment grid")
    _add_common(p)
    p.add_argument("--rows", default=None, help="subset of ABCDE")
    p.add_argument("--folds", default=None, help="comma-separated fold domains")

    p = sub.add_parser("sweep-lambda", help="sweep the reversal weight in the leave-one-out setup")
    _add_common(p)
    p.add_argument("--lambdas", default=None, help="comma-separated reversal weights")
    p.add_argument("--folds", default=None, help="comma-separated fold domains")

    p = sub.add_parser("confusion", help="train the domain classifier and report its confusion")
    _add_common(p)
    return parser


def _config_from_args(args) -> experiments.ExperimentConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides += [f"train.seed={args.seed}", f"generate.seed={args.seed}"]
    if getattr(args, "folds", None):
        overrides += [f"matrix.folds={args.folds}"]
    cfg = experiments.load_config(args.config, overrides)
    if args.manifest is not None:
        cfg.manifest_path = args.manifest.resolve()
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def _dispatch(args) -> dict:
    cfg = _config_from_args(args)
    if args.command == "generate":
        return experiments.cmd_generate(cfg)
    if args.command == "train":
        return experiments.cmd_train(cfg)
    if args.command == "tune":
        return experiments.cmd_tune(cfg, run_dir=args.run)
    if args.command == "apply":
        return experiments.cmd_apply(
            cfg, args.checkpoint, split=args.split, sigma=args.sigma, dump_scores=args.dump_scores
        )
    if args.command == "evaluate":
        return experiments.cmd_evaluate(cfg, args.hyp, split=args.split)
    if args.command == "matrix":
        return experiments.cmd_matrix(cfg, rows=args.rows)
    if args.command == "sweep-lambda":
        lambdas = None
        if args.lambdas:
            lambdas = [float(v) for v in args.lambdas.split(",") if v.strip()]
        return experiments.cmd_sweep_lambda(cfg, lambdas=lambdas)
    if args.command == "confusion":
        return experiments.cmd_confusion(cfg)
    raise UsageError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        results = _dispatch(args)
    except (*VALIDATION_ERRORS, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DavadError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 2
    for key, value in results.items():
        if isinstance(value, (str, int, float, bool)) or value is None:
            print(f"{key}: {value}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
