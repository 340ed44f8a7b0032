"""NMAC count per grid for converging vs. random traffic.

    python scripts/nmac_reversal.py --count 160 --reps 5 [--no-horizon] [--workers 2]
"""
import argparse
import time

from datc.harness import RunConfig, SweepSpec, run_sweep

GRIDS = ("2x2", "4x4", "8x8")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--count", type=int, default=160)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--no-horizon", action="store_true",
                    help="announce whole segments instead of the 180 s admission window")
    args = ap.parse_args()

    rc = RunConfig(sim={"admission_horizon": None}) if args.no_horizon else RunConfig()
    print(f"{'profile':<11}" + "".join(f"{g:>7}" for g in GRIDS) + "   seconds")
    for prof in ("converging", "random"):
        t0 = time.perf_counter()
        rows = run_sweep(SweepSpec(GRIDS, (args.count,), prof, args.seed, args.reps),
                         rc, args.workers)
        nm = [sum(r["nmacs"] for r in rows if r["grid"] == g) for g in GRIDS]
        print(f"{prof:<11}" + "".join(f"{n:>7}" for n in nm)
              + f"   {time.perf_counter() - t0:.0f}")


if __name__ == "__main__":
    main()
