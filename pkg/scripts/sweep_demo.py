"""Small grid x count sweep; writes sweep.csv plus the per-figure tables.

    python scripts/sweep_demo.py --out runs/sweep
"""
import argparse
from pathlib import Path

from datc.harness import SweepSpec, figure_tables, run_sweep
from datc.io import write_csv


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--grids", default="1x1,2x2,4x4")
    ap.add_argument("--counts", default="10,20,40")
    ap.add_argument("--profile", default="random")
    ap.add_argument("--reps", type=int, default=2)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="runs/sweep")
    args = ap.parse_args()

    spec = SweepSpec(tuple(args.grids.split(",")), tuple(int(c) for c in args.counts.split(",")),
                     args.profile, repetitions=args.reps)
    rows = run_sweep(spec, workers=args.workers)
    out = Path(args.out)
    write_csv(out / "sweep.csv", list(rows[0]), rows)
    for name, (header, table) in figure_tables(rows).items():
        write_csv(out / f"fig_{name}.csv", header, table)

    print(f"{'grid':>5} {'count':>5} {'success':>8} {'holds':>6} {'speed':>6} {'nmacs':>6}")
    for r in rows:
        if r["rep"] == 0:
            print(f"{r['grid']:>5} {r['count']:>5} {r['r_success']:>8.3f} {r['holdings']:>6}"
                  f" {r['speed_mods']:>6} {r['nmacs']:>6}")
    print(f"wrote {len(rows)} rows to {out}")


if __name__ == "__main__":
    main()
