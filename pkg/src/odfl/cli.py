"""Command-line entry point: simulate, pretrain, compare, ablate, export-plots.

Each command takes a single JSON config document; exit code 0 on success,
nonzero with a one-line reason on failure.
"""

from __future__ import annotations

import argparse
import sys

from . import harness


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="odfl",
        description="On-demand federated learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one selector per the config")
    p.add_argument("config", help="path to the JSON config")

    p = sub.add_parser("pretrain", help="offline pretraining from a transition log")
    p.add_argument("log", help="JSONL transition log")
    p.add_argument("out", help="output path for the mature-model envelope")
    p.add_argument("--config", default=None, help="JSON config (defaults when omitted)")
    p.add_argument("--epochs", type=int, default=20)

    p = sub.add_parser("compare", help="run all selectors on shared seeds")
    p.add_argument("config")

    p = sub.add_parser("ablate", help="run the three weight scenarios")
    p.add_argument("config")

    p = sub.add_parser("export-plots", help="melt a metrics CSV to long format")
    p.add_argument("metrics", help="metrics.csv produced by simulate")
    p.add_argument("out", help="output path for the long-format CSV")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            config = harness.load_config(args.config)
            result = harness.run_experiment(config)
            print(f"metrics: {result.paths['metrics']}")
            print(f"transitions: {result.paths['transitions']}")
        elif args.command == "pretrain":
            config = (
                harness.load_config(args.config)
                if args.config
                else harness.default_config()
            )
            losses = harness.pretrain_command(args.log, config, args.epochs, args.out)
            if losses:
                print(f"pretrained {args.epochs} epochs, "
                      f"loss {losses[0]:.4g} -> {losses[-1]:.4g}")
            print(f"model: {args.out}")
        elif args.command == "compare":
            config = harness.load_config(args.config)
            rows = harness.compare_command(config)
            print(harness.format_table(rows))
        elif args.command == "ablate":
            config = harness.load_config(args.config)
            rows = harness.ablation_command(config)
            print(harness.format_table(rows))
        else:  # export-plots
            count = harness.export_plots(args.metrics, args.out)
            print(f"wrote {count} rows to {args.out}")
    except Exception as exc:  # fail with a one-line reason
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
