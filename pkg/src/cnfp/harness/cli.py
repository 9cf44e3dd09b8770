"""Command line entry point: train, evaluate, export-density and compare."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from cnfp.harness.compare import compare, write_tables
from cnfp.harness.config import ExperimentConfig, load_config
from cnfp.harness.density import export_density
from cnfp.harness.runner import evaluate, run_seed, train


def _parse_state(text):
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"state must be comma-separated numbers, got {text!r}")
    if len(values) != 5:
        raise argparse.ArgumentTypeError("state needs five values: x,y,battery,goal_x,goal_y")
    return values


def build_parser():
    parser = argparse.ArgumentParser(prog="cnfp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every episode")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one variant")
    p.add_argument("--config", type=Path, help="YAML experiment config (defaults otherwise)")
    p.add_argument("--seed", type=int, help="train only this seed, writing straight into --out")
    p.add_argument("--out", type=Path, help="output directory")

    p = sub.add_parser("evaluate", help="deterministic rollouts of a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=12345)

    p = sub.add_parser("export-density", help="policy density at one state as JSON")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--state", type=_parse_state, required=True, help="x,y,battery,goal_x,goal_y")
    p.add_argument("--resolution", type=int, default=200)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--out", type=Path, help="write JSON here instead of stdout")

    p = sub.add_parser("compare", help="aggregate metrics.csv files across seeds")
    p.add_argument("files", nargs="+", type=Path)
    p.add_argument("--out", type=Path, help="write the table here instead of stdout")
    p.add_argument("--summary", type=Path, help="also write the summary JSON here")
    return parser


def _run(args):
    if args.command == "train":
        config = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            out = args.out or Path(config.output_dir) / config.variant / f"seed_{args.seed}"
            run_seed(config, args.seed, out, progress=args.verbose)
        else:
            train(config, args.out, progress=args.verbose)
    elif args.command == "evaluate":
        if args.episodes < 0:
            raise ValueError("episodes must be non-negative")
        print(json.dumps(evaluate(args.checkpoint, args.episodes, seed=args.seed)))
    elif args.command == "export-density":
        doc = export_density(args.checkpoint, args.state, args.resolution, args.out, args.samples)
        if args.out is None:
            json.dump(doc, sys.stdout)
            sys.stdout.write("\n")
    elif args.command == "compare":
        tables, summary = compare(args.files)
        if args.out:
            with open(args.out, "w", newline="") as fh:
                write_tables(tables, fh)
        else:
            write_tables(tables, sys.stdout)
        if args.summary:
            with open(args.summary, "w") as fh:
                json.dump(summary, fh, indent=2)
        print(json.dumps(summary), file=sys.stderr)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        _run(args)
    except Exception as exc:  # every failure becomes one JSON record
        print(json.dumps({"error": type(exc).__name__, "message": str(exc),
                          "command": args.command}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
