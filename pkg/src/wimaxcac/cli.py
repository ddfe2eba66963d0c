"""Command-line entry point: solve, sweep, simulate, compare.

Exit codes: 0 ok, 1 configuration error, 2 solver non-convergence,
3 analytic/simulation mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .chain import MemoryBudgetError, assemble
from .metrics import METRIC_FIELDS, report
from .simulate import run
from .solve import NonConvergenceError, SteadyState, solve
from .svg import line_chart

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_MISMATCH = 0, 1, 2, 3

SWEEP_COLUMNS = ("sweep_value", "policy", "p_block", "n_connections", "n_queue",
                 "p_drop", "throughput", "delay", "residual")
COMPARE_METRICS = ("p_block", "n_connections", "n_queue", "p_drop", "throughput", "delay")
Z_LIMIT = 3.0

log = logging.getLogger("wimaxcac")


def fmt(v) -> str:
    return f"{v:.12g}" if isinstance(v, float) else str(v)


def evaluate_document(doc: dict):
    """Solve one configuration document.

    Returns (report, converged).  A non-converged solve still yields a report
    computed from the last iterate so the caller can emit it.
    """
    config = cfgmod.build(doc)
    space, op = assemble(config)
    try:
        steady = solve(op, config.solver)
        converged = True
    except NonConvergenceError as exc:
        steady = SteadyState(exc.pi, exc.residual, exc.sweeps, exc.method)
        converged = False
    return report(config, space, op, steady), converged


def _threads() -> int:
    raw = os.environ.get("CAC_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            log.warning("ignoring non-integer CAC_THREADS=%r", raw)
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------

def cmd_solve(args) -> int:
    config = cfgmod.load(args.config)
    t0 = time.perf_counter()
    space, op = assemble(config)
    try:
        steady = solve(op, config.solver)
    except NonConvergenceError as exc:
        print(f"not converged: method={exc.method} sweeps={exc.sweeps} residual={exc.residual:.6e}")
        return EXIT_NONCONVERGED
    rep = report(config, space, op, steady)
    wall = time.perf_counter() - t0
    values = rep.as_dict()
    for name in METRIC_FIELDS:
        print(f"{name} = {fmt(values[name])}")
    print(f"exact_arrival_rate = {fmt(rep.exact_arrival_rate)}")
    print(f"exact_service_rate = {fmt(rep.exact_service_rate)}")
    print(f"residual = {steady.residual:.6e}")
    print(f"solver = {steady.method} ({steady.sweeps_used} sweeps, {space.total_states} states)")
    print(f"wall_time_s = {wall:.3f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(values))
            w.writerow([fmt(v) for v in values.values()])
    return EXIT_OK


def _sweep_task(item):
    value, policy, doc = item
    rep, converged = evaluate_document(doc)
    return value, policy, rep, converged


def cmd_sweep(args) -> int:
    doc = cfgmod.load_document(args.config)
    if args.steps < 2:
        raise cfgmod.ConfigError("--steps", "must be >= 2")
    if not args.start < args.stop:
        raise cfgmod.ConfigError("--from", "must be < --to")
    policies = args.policies.split(",") if args.policies else [doc["policy"]["name"]]
    for p in policies:
        if p not in cfgmod.POLICY_NAMES:
            raise cfgmod.ConfigError("--policies", f"unknown policy {p!r}")
    grid = np.linspace(args.start, args.stop, args.steps)

    tasks = []
    for value in grid:
        point = cfgmod.set_path(doc, args.param, value)
        for p in policies:
            d = json.loads(json.dumps(point))
            d["policy"]["name"] = p
            cfgmod.effective(d)
            tasks.append((float(value), p, d))

    workers = min(_threads(), len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_task, tasks))
    else:
        results = [_sweep_task(t) for t in tasks]

    failed = 0
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for value, p, rep, converged in results:
            if not converged:
                failed += 1
                print(f"warning: {args.param}={fmt(value)} policy={p} did not converge "
                      f"(residual {rep.residual:.3e})", file=sys.stderr)
            w.writerow([fmt(value), p] + [fmt(getattr(rep, k)) for k in SWEEP_COLUMNS[2:]])

    if args.svg:
        out = Path(args.svg)
        out.mkdir(parents=True, exist_ok=True)
        for metric in SWEEP_COLUMNS[2:-1]:
            series = {}
            for value, p, rep, _ in results:
                xs, ys = series.setdefault(p, ([], []))
                xs.append(value)
                ys.append(getattr(rep, metric))
            (out / f"{metric}.svg").write_text(line_chart(series, metric, args.param, metric))
    return EXIT_NONCONVERGED if failed else EXIT_OK


def cmd_simulate(args) -> int:
    config = cfgmod.load(args.config)
    res = run(config, args.frames, args.seed, trace=args.trace)
    for name in sorted(res.estimates):
        print(f"{name} = {fmt(res.estimates[name])} +- {fmt(res.std_errors[name])}")
    t = res.totals
    print(f"packets arrived={t['arrived']} served={t['served']} dropped={t['dropped']} "
          f"final_backlog={t['final_backlog']}")
    return EXIT_OK


def cmd_compare(args) -> int:
    config = cfgmod.load(args.config)
    space, op = assemble(config)
    steady = solve(op, config.solver)
    rep = report(config, space, op, steady)
    res = run(config, args.frames, args.seed)
    worst = 0.0
    print(f"{'metric':<14}{'analytic':>18}{'simulated':>18}{'std_err':>14}{'|z|':>9}")
    for name in COMPARE_METRICS:
        a = getattr(rep, name)
        z = abs(res.z_score(name, a))
        worst = max(worst, z)
        print(f"{name:<14}{a:>18.10g}{res.estimates[name]:>18.10g}{res.std_errors[name]:>14.4g}{z:>9.3f}")
    ok = worst <= Z_LIMIT and not math.isnan(worst)
    print(f"max |z| = {worst:.3f} -> {'agree' if ok else 'MISMATCH'}")
    return EXIT_OK if ok else EXIT_MISMATCH


def cmd_config(args) -> int:
    print(json.dumps(cfgmod.load_document(args.config), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wimaxcac", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one configuration")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--csv", help="also write a single-row CSV")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="sweep one numeric key across policies")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--param", required=True, help="dotted key, e.g. connections.arrival_rate_per_min")
    p.add_argument("--from", dest="start", type=float, required=True)
    p.add_argument("--to", dest="stop", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--policies", help="comma-separated: threshold,queue_aware,unrestricted")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--svg", help="directory for one SVG chart per metric")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="frame-level Monte Carlo")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--trace", help="per-frame CSV trace")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="analytic vs simulated metrics")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("config", help="print the effective configuration")
    p.add_argument("-c", "--config", required=True)
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"config error at {exc.path or '<document>'}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MemoryBudgetError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergenceError as exc:
        print(f"not converged: residual {exc.residual:.6e}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
