"""Command-line entry point.

Subcommands:
    train-offline <config>  generate nominal-MPC data and fit the prior model
    run <config>            closed-loop comparison on the true plant
    sweep <config>          sensitivity sweep over mismatch percentages
    verify                  numerical self-checks (lifted-identity residual
                            and LQ-solver oracle)
    report <dir>            render figures for an experiment directory
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np


def _load_config(path):
    from .harness import ExperimentConfig
    return ExperimentConfig.load(path)


def cmd_train_offline(args):
    from .harness import obtain_offline_model
    cfg = _load_config(args.config)
    outdir = Path(args.output or "offline_out")
    model = obtain_offline_model(cfg, workdir=outdir)
    print(f"offline model written to {outdir / 'offline_model.json'}")
    print(f"latent dimension N = {model.big_n}")
    return 0


def cmd_run(args):
    from .harness import run_experiment
    cfg = _load_config(args.config)
    outdir = Path(args.output or "experiment_out")
    results = run_experiment(cfg, outdir)
    for name, runs in results.items():
        failures = sum(r.failed for r in runs)
        final = np.mean([r.errors[-1] for r in runs])
        print(f"{name}: {len(runs)} runs, {failures} failures, "
              f"mean final error {final:.4g}")
    print(f"outputs in {outdir}")
    return 0


def cmd_sweep(args):
    from .harness import sensitivity_sweep
    cfg = _load_config(args.config)
    outdir = Path(args.output or "sweep_out")
    pcts = [float(p) for p in args.pct] if args.pct else (0.10, 0.20, 0.30)
    sensitivity_sweep(cfg, outdir, pct_list=pcts)
    print(f"sweep outputs in {outdir}")
    return 0


def cmd_verify(args):
    from .embedding import verify_koopman_form
    from .mpc import LqTrackingProblem, solve_lq_tracking

    grid = np.linspace(-1.0, 1.0, 21)
    resid = verify_koopman_form(0.9, 0.1, 0.5, 3, grid, grid)
    ok1 = resid < 1e-6
    print(f"lifted-identity residual: {resid:.3e} "
          f"({'PASS' if ok1 else 'FAIL'}, tolerance 1e-6)")

    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        n, p, h = 3, 1, 5
        A = rng.normal(size=(n, n)) * 0.5
        B = rng.normal(size=(n, p))
        Q = np.eye(n)
        R = np.eye(p)
        prob = LqTrackingProblem(A, B, Q, R, rng.normal(size=n),
                                 rng.normal(size=(h + 2, n)))
        sol = solve_lq_tracking(prob)
        worst = max(worst, sol.kkt_residual)
    ok2 = worst < 1e-8 * 100
    print(f"LQ solver worst KKT residual: {worst:.3e} "
          f"({'PASS' if ok2 else 'FAIL'})")
    return 0 if (ok1 and ok2) else 1


def cmd_report(args):
    from .plots import render_report
    written = render_report(args.dir)
    for p in written:
        print(f"wrote {p}")
    if not written:
        print("no summary.csv or timing.json found", file=sys.stderr)
        return 1
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="akmpc",
        description="Adaptive Koopman MPC simulator and benchmark harness.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-offline", help="train the offline prior model")
    p.add_argument("config")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_train_offline)

    p = sub.add_parser("run", help="run the controller comparison")
    p.add_argument("config")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="parameter-mismatch sensitivity sweep")
    p.add_argument("config")
    p.add_argument("-o", "--output")
    p.add_argument("--pct", nargs="*", help="mismatch fractions, e.g. 0.1 0.2")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="numerical self-checks")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="render figures for an experiment dir")
    p.add_argument("dir")
    p.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
