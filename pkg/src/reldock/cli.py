"""``reldock`` command line.

Exit codes: 0 success; 1 error (bad config, unreadable file, failed
``verify`` check); 2 docking failure in ``simulate`` or any run of
``montecarlo``.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import verify as checks
from .config import ConfigError, ScenarioConfig, load_config
from .io import (
    LogFormatError,
    TruthRecord,
    read_log,
    replay,
    write_log,
    write_metrics_csv,
    write_replay_csv,
    write_trace_csv,
)
from .scenario import run_docking, run_monte_carlo

OUT_ENV = "RELDOCK_OUT"
EXIT_OK, EXIT_ERROR, EXIT_FAILED = 0, 1, 2


def _default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "reldock-out"))


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _fmt(v) -> str:
    if isinstance(v, float):
        return "-" if math.isnan(v) else f"{v:.4g}"
    return str(v)


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_docking(cfg, record_log=True)
    m = result.metrics
    write_log(result.records, out / "run.log")
    row = m.summary()
    row["run"] = 0
    write_metrics_csv([row], out / "metrics.csv")
    write_trace_csv(result.records, out / "trace.csv")
    if not args.no_figures:
        from .plotting import plot_trace

        plot_trace(result.records, out / "trace.png", title=f"seed {cfg.seed}")
    status = "docked" if m.success else f"FAILED ({m.failure_reason})"
    print(f"seed {cfg.seed}: {status}")
    for key in ("time_to_dock_s", "switchover_time_s", "pos_err_p50_m", "in_range_pos_err_p50_m", "yaw_err_p95_deg"):
        print(f"  {key:24s} {_fmt(row[key])}")
    print(f"outputs in {out}")
    return EXIT_OK if m.success else EXIT_FAILED


def cmd_montecarlo(args) -> int:
    if args.runs < 1:
        raise ConfigError("--runs must be at least 1")
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    mc = run_monte_carlo(cfg, args.runs, workers=args.workers)
    rows = mc.rows()
    write_metrics_csv(rows, out / "montecarlo.csv")
    agg = mc.aggregate()
    if not args.no_figures:
        from .plotting import plot_error_histograms

        plot_error_histograms(
            np.concatenate([r.position_error_norms for r in mc.runs]),
            np.concatenate([r.position_error_norms[r.in_range] for r in mc.runs]),
            np.degrees(mc.pooled("attitude_errors")[:, 2]),
            out / "montecarlo.png",
        )
    print(f"{'run':>4} {'seed':>6} {'ok':>3} {'t_dock':>7} {'p50[cm]':>8} {'in-range p50[cm]':>17} {'yaw p95[deg]':>13}")
    for row in rows[:-1]:
        print(
            f"{row['run']:>4} {row['seed']:>6} {'y' if row['success'] else 'n':>3} {_fmt(row['time_to_dock_s']):>7}"
            f" {_fmt(row['pos_err_p50_m'] * 100):>8} {_fmt(row['in_range_pos_err_p50_m'] * 100):>17}"
            f" {_fmt(row['yaw_err_p95_deg']):>13}"
        )
    print(f"success {agg['successes']}/{agg['runs']}")
    print(f"in-range position error p50 {_fmt(agg['in_range_pos_err_p50_m'] * 100)} cm, p95 {_fmt(agg['in_range_pos_err_p95_m'] * 100)} cm")
    print(f"onboard steps with position error < 10 cm: {_fmt(agg['frac_pos_err_below_10cm'] * 100)} %")
    print(f"onboard steps with yaw error < 5 deg: {_fmt(agg['frac_yaw_err_below_5deg'] * 100)} %")
    print(f"mean NEES {_fmt(agg['mean_nees'])} (9 dof)")
    print(f"wall time {time.perf_counter() - t0:.1f} s, outputs in {out}")
    return EXIT_OK if agg["successes"] == agg["runs"] else EXIT_FAILED


def cmd_replay(args) -> int:
    records = read_log(args.log)
    result = replay(records)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_replay_csv(records, result, out / "replay.csv")
    if not args.no_figures and result.position_errors.size:
        from .plotting import plot_trace

        truth = [r for r in records if isinstance(r, TruthRecord)]
        plot_trace(truth + result.estimates, out / "replay.png", title="replay")
    print(f"{len(result.estimates)} estimates, {result.n_updates} marker updates, {result.n_rejected} rejected")
    if result.position_errors.size:
        e = result.position_errors
        print(f"position error p50 {np.median(e) * 100:.2f} cm, max {e.max() * 100:.2f} cm")
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = checks.run_all(quick=args.quick)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("failed: " + "; ".join(failed))
        return EXIT_ERROR
    print("all checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reldock",
        description="Relative localization EKF and two-vehicle docking simulator.",
        epilog=f"The default output directory is ${OUT_ENV} if set, else ./reldock-out.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def scenario_flags(p):
        p.add_argument("--config", type=Path, help="scenario YAML; omitted keys keep their defaults")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--no-figures", action="store_true", help="skip PNG figures, write CSV and logs only")

    p = sub.add_parser("simulate", help="run one docking attempt (exit 0 docked, 2 failed, 1 error)")
    scenario_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("montecarlo", help="run a batch with seeds seed, seed+1, ...")
    scenario_flags(p)
    p.add_argument("--runs", type=int, default=50, help="number of runs (default 50)")
    p.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("replay", help="re-run the estimator over a recorded log")
    p.add_argument("--log", type=Path, required=True, help="log written by simulate")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--no-figures", action="store_true", help="skip the PNG figure")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("verify", help="Jacobian, covariance and NEES self-checks (exit 0 iff all pass)")
    p.add_argument("--quick", action="store_true", help="shorter covariance soak and NEES runs")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "out", "unset") is None:
        args.out = _default_out()
    try:
        return args.func(args)
    except (ConfigError, LogFormatError, OSError, ValueError) as exc:
        print(f"reldock {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
