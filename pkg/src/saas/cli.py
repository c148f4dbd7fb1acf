"""Command-line front end.

    saas <subcommand> --config FILE [--seed N] [--out DIR] [--quiet] [--jobs N]

Exit codes: 0 success, 1 usage error, 2 configuration/data error,
3 numeric failure (divergence).
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from . import bench
from .config import ConfigError, config_to_dict, parse_config
from .data import DataError
from .nn_core import DimensionError, NumericError

SUBCOMMANDS = ("saas", "baseline", "corruption-speed", "outer-epoch-speed", "sweep-unlabeled")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="saas", description="Speed-as-a-supervisor semi-supervised learning.")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    helps = {
        "saas": "baseline, Phase I and Phase II; headline error rates",
        "baseline": "supervised baseline on the labeled set only",
        "corruption-speed": "cumulative loss vs. label corruption",
        "outer-epoch-speed": "training speed on pseudo-labels vs. outer epochs",
        "sweep-unlabeled": "test accuracy vs. number of unlabeled samples",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--seed", type=_u64, default=None, help="override the master seed")
        p.add_argument("--out", default=None, help="output directory (default: $SAAS_OUT_DIR or config)")
        p.add_argument("--quiet", action="store_true", help="no progress output")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers for independent runs")
    return parser


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _run(args) -> bench.ExperimentResult:
    run_cfg = parse_config(args.config)
    seed = run_cfg.seed if args.seed is None else args.seed
    cfg = run_cfg.saas_config(seed)
    cfg.validate()
    data, exp = run_cfg.data, run_cfg.experiment
    log = (lambda msg: None) if args.quiet else (lambda msg: print(msg, file=sys.stderr, flush=True))

    def progress(d):
        log(f"outer epoch {d.epoch:4d}  L_T={d.cumulative_loss:.4f}  "
            f"H(P)={d.posterior_entropy:.4f}  acc={d.pseudo_label_accuracy:.4f}")

    if args.command == "saas":
        result = bench.run_ssl(cfg, data, exp.n_seeds, args.jobs, progress=progress)
    elif args.command == "baseline":
        result = bench.baseline_experiment(cfg, data, exp.n_seeds, args.jobs)
    elif args.command == "corruption-speed":
        cdata = replace(data, n=exp.corruption_n) if exp.corruption_n else data
        result = bench.corruption_speed_experiment(
            cfg, cdata, exp.fractions, exp.n_seeds, exp.epochs_budget, exp.corruption_lr,
            exp.corruption_momentum, exp.corruption_mode, args.jobs)
    elif args.command == "outer-epoch-speed":
        result = bench.outer_epoch_speed_experiment(cfg, data, exp.M_list, exp.probe_epochs,
                                                    exp.n_seeds, exp.probe_lr, args.jobs)
    else:
        result = bench.unlabeled_sweep_experiment(cfg, data, exp.unlabeled_counts, exp.n_seeds, args.jobs)

    out = args.out or os.environ.get("SAAS_OUT_DIR") or run_cfg.output_dir
    paths = bench.write_result(result, out, {
        "subcommand": args.command,
        "effective_seed": seed,
        "run_config": config_to_dict(run_cfg),
    })
    log(f"{args.command}: {len(result.rows)} rows in {result.wall_time:.1f}s")
    if not args.quiet:
        print(bench.to_csv(result.summary_columns, result.summary), end="")
        for p in paths:
            log(f"wrote {p}")
    return result


def dispatch(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("no subcommand given")
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
    except UsageError as err:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(f"valid subcommands: {', '.join(SUBCOMMANDS)}", file=sys.stderr)
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    try:
        _run(args)
    except ConfigError as err:
        print(f"config error [{err.code}]: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, DimensionError, ValueError, OSError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
