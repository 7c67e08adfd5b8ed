"""Command-line entry point: ``cutpost <subcommand> [options]``.

Subcommands reproduce the package's benchmark comparisons and emit
plot-ready CSV (or JSON) files.  Every output begins with a header carrying
the tool version, the resolved configuration, and the master seed;
re-running with the same header reproduces the data columns exactly at any
worker count (wall-time columns are measurements; pass ``--timing zero``
for byte-identical files).

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__, experiments
from .cutcore import ConfigError

_NUMERICAL_ERRORS = (
    ArithmeticError,
    np.linalg.LinAlgError,
    RuntimeError,
)


def _int_list(text):
    return tuple(int(v) for v in text.split(",") if v)


def _str_list(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _float_list(text):
    return tuple(float(v) for v in text.split(",") if v)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cutpost",
        description="Benchmark runner for cut-distribution approximation engines.",
    )
    parser.add_argument("--version", action="version", version=f"cutpost {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--threads", type=int, default=1, help="worker processes")
        p.add_argument("--out-dir", default="results", help="output directory")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--preset", choices=("desk", "paper"), default="desk")
        p.add_argument(
            "--timing",
            choices=("real", "zero"),
            default="real",
            help="'zero' blanks wall-time columns for byte-identical reruns",
        )

    p = sub.add_parser("db-benchmark", help="engine accuracy vs the analytic cut")
    common(p)
    p.add_argument("--budgets", type=_int_list, default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--methods", type=_str_list, default=("ds", "ds-normal", "ecp"))
    p.add_argument("--samplers", type=_str_list, default=("iid",))
    p.add_argument("--total-draws", type=int, default=None)

    p = sub.add_parser("doe-compare", help="design quality vs the case-weight prior")
    common(p)
    p.add_argument("--budget", type=int, default=None, dest="L")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--samplers", type=_str_list, default=experiments.SAMPLERS)

    p = sub.add_parser("eco-benchmark", help="ecological study vs simulated truth")
    common(p)
    p.add_argument("--budgets", type=_int_list, default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--methods", type=_str_list, default=experiments.ECO_METHODS)
    p.add_argument("--ground-truth-l", type=int, default=None)
    p.add_argument("--pool-size", type=int, default=None)
    p.add_argument("--ecp-m", type=int, default=None)
    p.add_argument("--prediction-m", type=int, default=None)

    p = sub.add_parser("coverage", help="misspecification coverage/MSE study")
    common(p)
    p.add_argument("--sweep", choices=("sigma-star", "sigma-gamma-star"), default="sigma-star")
    p.add_argument("--grid", type=_float_list, default=None)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--level", type=float, default=0.95)

    p = sub.add_parser("seq-demo", help="sequential vs plain emulation")
    common(p)
    p.add_argument("--build-size", type=int, default=None)
    p.add_argument("--budget", type=int, default=None, dest="L")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--u", type=float, default=None)

    return parser


def _preset(sub, preset, key, override):
    if override is not None:
        return override
    return experiments.PRESETS[sub][preset][key]


def run(args) -> list[str]:
    os.makedirs(args.out_dir, exist_ok=True)
    common = dict(
        out_dir=args.out_dir,
        seed=args.seed,
        threads=args.threads,
        fmt=args.format,
        timing=args.timing,
    )
    sub = args.subcommand
    if sub == "db-benchmark":
        return experiments.run_db_benchmark(
            budgets=_preset(sub, args.preset, "budgets", args.budgets),
            reps=_preset(sub, args.preset, "reps", args.reps),
            methods=args.methods,
            samplers=args.samplers,
            total_draws=_preset(sub, args.preset, "total_draws", args.total_draws),
            **common,
        )
    if sub == "doe-compare":
        return experiments.run_doe_compare(
            L=_preset(sub, args.preset, "L", args.L),
            reps=_preset(sub, args.preset, "reps", args.reps),
            samplers=args.samplers,
            **common,
        )
    if sub == "eco-benchmark":
        preset = experiments.PRESETS[sub][args.preset]
        return experiments.run_eco_benchmark(
            budgets=args.budgets or preset["budgets"],
            reps=args.reps or preset["reps"],
            methods=args.methods,
            ground_truth_l=args.ground_truth_l or preset["ground_truth_l"],
            pool_size=args.pool_size or preset["pool_size"],
            pool_burn_in=preset["pool_burn_in"],
            ds_total_draws=preset["ds_total_draws"],
            ecp_m=args.ecp_m or preset["ecp_m"],
            prediction_m=args.prediction_m or preset["prediction_m"],
            draws_per_component=preset["draws_per_component"],
            **common,
        )
    if sub == "coverage":
        return experiments.run_coverage_study(
            sweep=args.sweep.replace("-", "_"),
            grid=_preset(sub, args.preset, "grid", args.grid),
            reps=_preset(sub, args.preset, "reps", args.reps),
            level=args.level,
            **common,
        )
    if sub == "seq-demo":
        return experiments.run_seq_demo(
            build_size=_preset(sub, args.preset, "build_size", args.build_size),
            L=_preset(sub, args.preset, "L", args.L),
            reps=_preset(sub, args.preset, "reps", args.reps),
            u=_preset(sub, args.preset, "u", args.u),
            **common,
        )
    raise ConfigError(f"unknown subcommand {sub!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        paths = run(args)
    except (ConfigError, ValueError) as exc:
        print(f"cutpost: configuration error: {exc}", file=sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as exc:
        print(f"cutpost: numerical failure: {exc}", file=sys.stderr)
        return 3
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
