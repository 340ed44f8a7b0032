"""Command line entry point.

Exit codes: 0 success, 1 bad configuration or input, 2 simulation timeout,
3 safety invariant violated.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from .airspace import SectorGrid, generate_synthetic_traffic, snapshot_at
from .bo import PROTOCOL_SPACE, run_campaign
from .harness import (METRIC_FIELDS, SWEEP_KEYS, ConfigError, RunConfig, SimulationObjective,
                      SweepSpec, TrafficSource, figure_tables, load_config, metrics_row,
                      parse_grid, run_one, run_sweep)
from .io import ScenarioError, json_line, read_plans, write_csv, write_plans
from .sectorization import FeatureVector, extract_features, label_optimal_grid, score_all

EXIT_OK, EXIT_CONFIG, EXIT_TIMEOUT, EXIT_VIOLATION = 0, 1, 2, 3


def _out(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _source(args, rc: RunConfig) -> TrafficSource:
    sc = rc.scenario
    profile = args.profile or sc.get("profile", "random")
    count = args.count if args.count is not None else int(sc.get("count", 10))
    seed = args.seed if args.seed is not None else int(sc.get("seed", 0))
    return TrafficSource(profile, count, seed, args.plans or sc.get("plan_file"))


def _grid(args, rc: RunConfig) -> SectorGrid:
    return parse_grid(args.grid or rc.scenario.get("grid", "2x2"))


def cmd_simulate(args, rc: RunConfig) -> int:
    grid = _grid(args, rc)
    src = _source(args, rc)
    over = {"record_trace": bool(args.trace)}
    if args.time_limit is not None:
        over["time_limit"] = args.time_limit
    res = run_one(src, grid, rc, src.seed, **over)
    out = _out(args)
    row = metrics_row(res.metrics, wall=args.wall)
    write_csv(out / "metrics.csv", list(row), [row])
    write_csv(out / "outcomes.csv", ["aircraft", "status"], sorted(res.outcomes.items()))
    write_csv(out / "nmacs.csv", ["a", "b", "time", "horizontal", "vertical"],
              [[r.pair[0], r.pair[1], r.time, r.horizontal, r.vertical]
               for r in res.nmac_reports])
    write_csv(out / "messages.csv", ["kind", "count"], sorted(res.message_counts.items()))
    write_plans(out / "trajectories.csv", list(res.trajectories.values()))
    if args.trace:
        (out / "trace.csv").write_text(res.trace.to_csv())
    summary = {"command": "simulate", "grid": f"{grid.rows}x{grid.cols}",
               "violations": len(res.violations), **row}
    print(json_line(summary))
    if res.violations:
        for v in res.violations:
            print("violation:", v, file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_TIMEOUT if res.metrics.timeout else EXIT_OK


def _csv_list(text: str, conv=str) -> tuple:
    return tuple(conv(v.strip()) for v in text.split(",") if v.strip())


def cmd_sweep(args, rc: RunConfig) -> int:
    sw = rc.sweep
    grids = _csv_list(args.grids or sw.get("grids", "2x2,4x4,8x8"))
    for g in grids:
        parse_grid(g)
    counts = _csv_list(args.counts or sw.get("counts", "10,20,40"), int)
    spec = SweepSpec(grids, counts,
                     profile=args.profile or sw.get("profile", "random"),
                     seed=args.seed if args.seed is not None else int(sw.get("seed", 0)),
                     repetitions=args.reps if args.reps is not None
                     else int(sw.get("repetitions", 1)),
                     plan_file=args.plans or sw.get("plan_file"))
    rows = run_sweep(spec, rc, workers=args.workers, wall=args.wall)
    out = _out(args)
    header = SWEEP_KEYS + METRIC_FIELDS + (["wall_time"] if args.wall else []) + ["violations"]
    write_csv(out / "sweep.csv", header, rows)
    for name, (h, body) in figure_tables(rows).items():
        write_csv(out / f"fig_{name}.csv", h, body)
    nviol = sum(r["violations"] for r in rows)
    ntime = sum(bool(r["timeout"]) for r in rows)
    print(json_line({"command": "sweep", "cells": len(rows), "violations": nviol,
                     "timeouts": ntime, "nmacs": sum(r["nmacs"] for r in rows)}))
    if nviol:
        return EXIT_VIOLATION
    return EXIT_TIMEOUT if ntime else EXIT_OK


def cmd_tune(args, rc: RunConfig) -> int:
    cp = rc.campaign
    grid = _grid(args, rc)
    src = _source(args, rc)
    plans, fuel = src.load(grid)
    objective = SimulationObjective(plans, grid, rc, fuel)
    budget = args.budget if args.budget is not None else int(cp.get("budget", 50))
    n_init = args.n_init if args.n_init is not None else int(cp.get("n_init", 10))
    seed = args.campaign_seed if args.campaign_seed is not None else int(cp.get("seed", 0))

    def progress(rec):
        if args.verbose:
            print(f"trial {rec.index:3d} {rec.phase:3s} score={rec.score:.4f}", file=sys.stderr)

    camp = run_campaign(objective, PROTOCOL_SPACE, budget, n_init, seed, src.seed, progress)
    out = _out(args)
    names = PROTOCOL_SPACE.names
    rows = [[t.index, t.phase, *[t.raw[n] for n in names], t.score, camp.best_trace[t.index]]
            for t in camp.trials]
    write_csv(out / "trials.csv", ["trial", "phase", *names, "score", "best_so_far"], rows)
    if camp.importance is not None:
        write_csv(out / "importance.csv", ["parameter", "importance"],
                  [[n, float(v)] for n, v in zip(names, camp.importance)])
    best = camp.best
    print(json_line({"command": "tune", "trials": len(camp.trials), "best_score": best.score,
                     "best_trial": best.index, "best_params": best.raw}))
    return EXIT_OK


def _snapshot_inputs(args, rc: RunConfig):
    grid = _grid(args, rc)
    plans, _ = _source(args, rc).load(grid)
    if not plans:
        raise ConfigError("no traffic to analyse")
    t = args.time if args.time is not None else 0.5 * (
        min(p.start_time for p in plans) + max(p.end_time for p in plans))
    snap = snapshot_at(plans, t, grid.region_side, args.day, args.hour)
    active = [p for p in plans if p.start_time <= t <= p.end_time]
    return snap, active


def cmd_features(args, rc: RunConfig) -> int:
    snap, _ = _snapshot_inputs(args, rc)
    fv = extract_features(snap)
    out = _out(args)
    write_csv(out / "features.csv", FeatureVector.names(), [fv.as_list()])
    print(json_line({"command": "features", "aircraft": len(snap.aircraft),
                     **dict(zip(FeatureVector.names(), fv.as_list()))}))
    return EXIT_OK


def cmd_label(args, rc: RunConfig) -> int:
    snap, active = _snapshot_inputs(args, rc)
    scores = score_all(snap, active, rc.weights)
    r, c = label_optimal_grid(snap, active, rc.weights, scores)
    out = _out(args)
    write_csv(out / "grid_scores.csv",
              ["rows", "cols", "occupancy_variance", "handoffs", "risk_pairs", "J"],
              [[s.rows, s.cols, s.occupancy_variance, s.handoff_count, s.risk_pair_count, s.J]
               for s in scores])
    fv = extract_features(snap)
    write_csv(out / "labeled.csv", FeatureVector.names() + ["rows", "cols"],
              [fv.as_list() + [r, c]])
    print(json_line({"command": "label", "aircraft": len(snap.aircraft), "rows": r, "cols": c}))
    return EXIT_OK


def cmd_gen_traffic(args, rc: RunConfig) -> int:
    grid = _grid(args, rc)
    src = _source(args, rc)
    if src.plan_file:
        raise ConfigError("gen-traffic does not take a plan file")
    plans = generate_synthetic_traffic(src.seed, src.count, grid, src.profile)
    dest = Path(args.out)
    if dest.suffix != ".csv":
        dest = _out(args) / "plans.csv"
    write_plans(dest, plans)
    print(json_line({"command": "gen-traffic", "aircraft": len(plans), "file": str(dest)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="datc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, traffic=True):
        p.add_argument("--config", help="ini file with [params], [delivery], [sim], ...")
        p.add_argument("--out", default="out", help="output directory")
        if traffic:
            p.add_argument("--grid", help="sector grid RxC")
            p.add_argument("--profile", choices=["random", "converging"])
            p.add_argument("--count", type=int)
            p.add_argument("--seed", type=int)
            p.add_argument("--plans", help="flight plan CSV instead of synthetic traffic")

    p = sub.add_parser("simulate", help="run one scenario")
    common(p)
    p.add_argument("--time-limit", type=float)
    p.add_argument("--trace", action="store_true", help="also write the event trace")
    p.add_argument("--wall", action="store_true", help="include wall-clock time")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("sweep", help="grid x traffic sweep")
    common(p, traffic=False)
    p.add_argument("--grids")
    p.add_argument("--counts")
    p.add_argument("--profile", choices=["random", "converging"])
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--plans")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--wall", action="store_true")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("tune", help="Bayesian optimisation of protocol parameters")
    common(p)
    p.add_argument("--budget", type=int)
    p.add_argument("--n-init", type=int)
    p.add_argument("--campaign-seed", type=int)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=cmd_tune)

    for name, fn, text in (("features", cmd_features, "traffic features of a snapshot"),
                           ("label", cmd_label, "optimal RxC grid for a snapshot")):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--time", type=float, help="snapshot time (default: mid-traffic)")
        p.add_argument("--day", type=int, default=0)
        p.add_argument("--hour", type=int, default=12)
        p.set_defaults(fn=fn)

    p = sub.add_parser("gen-traffic", help="write synthetic flight plans")
    common(p)
    p.set_defaults(fn=cmd_gen_traffic)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = load_config(args.config)
        return args.fn(args, rc)
    except (ConfigError, ScenarioError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
