"""Command-line entry point.

Exit codes: 0 success, 2 configuration / input error, 3 degenerate
instance, 4 solver failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .discriminant import gain_table_to_csv, gains_of
from .errors import ConfigurationError, DegenerateInstanceError, IngestionError, SolverFailureError
from .experiments import (
    build_instance,
    evaluate_point,
    load_config,
    row_columns,
    rows_to_csv,
    run_compare,
    run_dg_accuracy_curve,
    run_sweep,
    with_overrides,
)
from .model import atomic_write_text
from .optimizer import SCHEMES, allocation_to_csv, solve_scheme, trace_to_csv

EXIT_OK, EXIT_CONFIG, EXIT_DEGENERATE, EXIT_SOLVER = 0, 2, 3, 4

log = logging.getLogger("maxmin_aircomp")

SUMMARY_COLUMNS = ["scheme", "points", "min_dg", "avg_dg", "acc_map", "acc_softmax", "bal_acc", "recall_spread"]


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI experiment config (defaults used when omitted)")
    common.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    common.add_argument("--seed", type=_u64, help="master seed, overrides [experiment] master_seed")
    common.add_argument("--scheme", choices=SCHEMES, help="restrict to one allocation scheme")
    common.add_argument("--trials", type=_positive, help="Monte Carlo trials per point")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="maxmin-aircomp", description="Max-min discriminant gain AirComp power allocation")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("optimize", parents=[common], help="solve one instance; write allocation, trace and gains")
    sub.add_parser("simulate", parents=[common], help="solve and evaluate accuracy at the base point")
    sub.add_parser("sweep-devices", parents=[common], help="accuracy versus number of devices")
    sub.add_parser("sweep-power", parents=[common], help="accuracy versus transmit power")
    sub.add_parser("dg-accuracy-curve", parents=[common], help="min discriminant gain versus accuracy")
    sub.add_parser("compare", parents=[common], help="all schemes at the base point, with a summary")
    return p


def _write_all(outputs):
    """Write every (path, text) only after all of them were produced."""
    for path, text in outputs:
        atomic_write_text(path, text)
        log.info("wrote %s", path)


def cmd_optimize(cfg, out):
    scheme = cfg.schemes[0] if len(cfg.schemes) == 1 else "maxmin"
    instance = build_instance(cfg, 0)
    trace = solve_scheme(instance, scheme, cfg.sca)
    _write_all([
        (out / f"allocation_{scheme}.csv", allocation_to_csv(trace.b)),
        (out / f"trace_{scheme}.csv", trace_to_csv(trace)),
        (out / f"gains_{scheme}.csv", gain_table_to_csv(gains_of(instance, trace.b))),
    ])
    print(f"{scheme}: min_gain={trace.min_gain:.6g} avg_gain={trace.avg_gain:.6g} "
          f"termination={trace.termination} iterations={len(trace.records)}")
    if trace.termination == "solver_failure":
        raise SolverFailureError(trace.message)


def _check_rows(rows):
    # an instance that cannot be built fails every row the same way
    if rows and all(r["status"] == "failed:DegenerateInstanceError" for r in rows):
        raise DegenerateInstanceError("every point has a degenerate class pair")
    if rows and all(r["status"] == "failed:ConfigurationError" for r in rows):
        raise ConfigurationError("every point failed validation")


def cmd_simulate(cfg, out):
    rows = [evaluate_point(cfg, "power_dbm", s, sc) for s in range(cfg.seeds) for sc in cfg.schemes]
    _check_rows(rows)
    _write_all([(out / "simulate.csv", rows_to_csv(rows, row_columns(cfg.instance.num_classes)))])
    for r in rows:
        print(f"{r['scheme']:8s} seed={r['seed']} min_dg={r['min_dg']:.4g} acc_map={r['acc_map']:.4f} {r['status']}")


def _cmd_rows(name, rows, cfg, out):
    _check_rows(rows)
    _write_all([(out / name, rows_to_csv(rows, row_columns(cfg.instance.num_classes)))])
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} rows written to {out / name} ({failed} not ok)")


def cmd_compare(cfg, out):
    rows, summary = run_compare(cfg)
    _check_rows(rows)
    _write_all([
        (out / "compare.csv", rows_to_csv(rows, row_columns(cfg.instance.num_classes))),
        (out / "compare_summary.csv", rows_to_csv(summary, SUMMARY_COLUMNS)),
    ])
    for r in summary:
        print(f"{r['scheme']:8s} min_dg={r['min_dg']:.4g} acc_map={r['acc_map']:.4f} "
              f"bal_acc={r['bal_acc']:.4f} recall_spread={r['recall_spread']:.4f}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = with_overrides(load_config(args.config), args.seed, args.trials, args.scheme)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "optimize":
            cmd_optimize(cfg, out)
        elif args.command == "simulate":
            cmd_simulate(cfg, out)
        elif args.command == "sweep-devices":
            _cmd_rows("sweep_devices.csv", run_sweep(cfg, "devices"), cfg, out)
        elif args.command == "sweep-power":
            _cmd_rows("sweep_power.csv", run_sweep(cfg, "power_dbm"), cfg, out)
        elif args.command == "dg-accuracy-curve":
            scheme = cfg.schemes[0] if len(cfg.schemes) == 1 else "maxmin"
            _cmd_rows("dg_accuracy_curve.csv", run_dg_accuracy_curve(cfg, scheme), cfg, out)
        elif args.command == "compare":
            cmd_compare(cfg, out)
    except (ConfigurationError, IngestionError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DegenerateInstanceError as exc:
        print(f"degenerate instance: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except SolverFailureError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
