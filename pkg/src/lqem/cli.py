"""Command line entry point: ``lqem simulate|estimate|prox-table|report``.

Exit codes: 0 success, 2 configuration error, 3 a method failed on every
replicate, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys

import numpy as np

from . import experiment as ex
from .penalty import lq_scalar_prox

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

logger = logging.getLogger("lqem")


def _experiment_args(p):
    p.add_argument("--config", help="experiment JSON (default: the built-in reference experiment)")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--profile", choices=["standard", "high"], help="grid accuracy profile")
    p.add_argument("--replicates", type=int, help="override the replicate count")
    p.add_argument("--seed", type=int, help="override the base seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lqem", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write one dataset JSON per replicate")
    _experiment_args(p)

    p = sub.add_parser("estimate", help="run every configured method on every replicate")
    _experiment_args(p)
    p.add_argument("--jobs", type=int, default=1, help="replicates run concurrently")
    p.add_argument("--svg", action="store_true", help="also render SVG convergence charts")

    p = sub.add_parser("report", help="rebuild report.json/csv from existing traces")
    _experiment_args(p)

    p = sub.add_parser("prox-table", help="tabulate the scalar lq prox over a z range")
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--lam", type=float, required=True)
    p.add_argument("--z-min", type=float, default=-5.0)
    p.add_argument("--z-max", type=float, default=5.0)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--out", help="CSV path (default: stdout)")
    return parser


def _config(args) -> ex.ExperimentConfig:
    doc = ex.load_config(args.config)
    return ex.parse_config(doc, output_dir=args.out, profile=args.profile,
                           replicates=args.replicates, seed=args.seed)


def prox_table(q: float, lam: float, z_min: float, z_max: float, step: float):
    """Rows ``(z, prox(z))`` on ``z_min + i * step``, i = 0..floor((z_max - z_min)/step)."""
    if not step > 0 or not z_max >= z_min:
        raise ValueError("need step > 0 and z_max >= z_min")
    count = math.floor((z_max - z_min) / step + 1e-9) + 1
    zs = z_min + step * np.arange(count)
    return [(float(z), lq_scalar_prox(z, lam, q)) for z in zs]


def cmd_simulate(args) -> int:
    cfg = _config(args)
    paths = ex.write_datasets(cfg)
    print(f"wrote {len(paths)} datasets under {cfg.output_dir / 'datasets'}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _config(args)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    ex.run_replicates(cfg, jobs=args.jobs)
    report = ex.write_report(cfg)
    ex.write_series(cfg)
    if args.svg:
        ex.write_svg(cfg)
    _print_report(report)
    failed = ex.all_failed_method(report)
    if failed is not None:
        print(f"method {failed} failed on every replicate", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _config(args)
    report = ex.write_report(cfg)
    _print_report(report)
    return EXIT_OK


def cmd_prox_table(args) -> int:
    rows = prox_table(args.q, args.lam, args.z_min, args.z_max, args.step)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["z", "prox"])
        w.writerows((format(z, ".17g"), format(v, ".17g")) for z, v in rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def _print_report(report):
    print(f"{'label':<16}{'median_mse':>14}{'zero_rate':>11}{'iters':>8}{'fail':>6}")
    for r in report["rows"]:
        mse = "-" if r["median_mse"] is None else f"{r['median_mse']:.4e}"
        rate = "-" if r["zero_recovery_rate"] is None else f"{r['zero_recovery_rate']:.2f}"
        its = "-" if r["mean_iterations"] is None else f"{r['mean_iterations']:.1f}"
        print(f"{r['label']:<16}{mse:>14}{rate:>11}{its:>8}{len(r['failures']):>6}")


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate,
            "report": cmd_report, "prox-table": cmd_prox_table}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        if args.command == "prox-table":
            print(f"invalid range: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        raise
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
