"""Command line entry points: ``synth``, ``train``, ``eval``, ``compare``.

Flags override config-file values, which override built-in defaults.  Run
``blindvq <command> --help`` for the per-command surface.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .harness import (
    RunConfig,
    TRAIN_VARIANTS,
    compare_run,
    eval_run,
    load_config_file,
    synth_run,
    train_run,
)


def _add_shared_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--corpus", help="corpus directory (with manifest.csv)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="master seed for every random choice")
    p.add_argument("--variant", choices=TRAIN_VARIANTS, help="2D feature extractor variant")
    p.add_argument("--scale", choices=("canonical", "tiny"), help="network scale")
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--batch-size", type=int, dest="batch_size", help="clips per SGD batch (>= 2)")
    p.add_argument("--lr", type=float, help="constant learning rate")
    p.add_argument("--alpha", type=float, help="weight of the PLCC loss in [0, 1]")
    p.add_argument("--tau", type=float, help="soft-rank temperature")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blindvq", description="blind video quality assessment runs"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic distorted corpus")
    _add_shared_flags(p_synth)
    p_synth.add_argument("--clips", type=int, help="number of clips (default 54)")
    p_synth.add_argument("--frames", type=int, help="frames per clip (even)")
    p_synth.add_argument("--size", type=int, help="frame width/height in pixels")

    p_train = sub.add_parser("train", help="train the quality head on a corpus")
    _add_shared_flags(p_train)

    p_eval = sub.add_parser("eval", help="score a saved model on one split")
    _add_shared_flags(p_eval)
    p_eval.add_argument("--params", required=True, help="params.bin from a training run")
    p_eval.add_argument("--split", required=True, choices=("train", "val", "test"))

    p_cmp = sub.add_parser("compare", help="train both variants and tabulate test metrics")
    _add_shared_flags(p_cmp)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults < config file < explicit CLI flags."""
    values: dict = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for field in dataclasses.fields(RunConfig):
        flag = getattr(args, field.name, None)
        if flag is not None:
            values[field.name] = flag
    return RunConfig(**values)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = resolve_config(args)
    if args.command == "synth":
        manifest = synth_run(config)
        print(manifest)
    elif args.command == "train":
        result = train_run(config)
        print(f"log: {result.log_path}")
        print(f"params: {result.params_path}")
        for key, value in result.test_metrics.items():
            print(f"test {key}: {value:.4f}")
    elif args.command == "eval":
        metrics = eval_run(args.params, config.corpus, args.split, out=config.out)
        for key, value in metrics.items():
            print(f"{args.split} {key}: {value:.4f}")
    elif args.command == "compare":
        report = compare_run(config)
        print(report.table_text, end="")
        print(f"csv: {report.csv_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
