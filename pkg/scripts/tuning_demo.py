"""Tune protocol timers on one synthetic scenario and print the best-so-far curve.

    python scripts/tuning_demo.py --count 10 --budget 12 --n-init 6
"""
import argparse

from datc.airspace import generate_synthetic_traffic
from datc.bo import PROTOCOL_SPACE, run_campaign
from datc.harness import SimulationObjective, parse_grid


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--grid", default="2x2")
    ap.add_argument("--count", type=int, default=10)
    ap.add_argument("--profile", default="random")
    ap.add_argument("--budget", type=int, default=12)
    ap.add_argument("--n-init", type=int, default=6)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    grid = parse_grid(args.grid)
    plans = generate_synthetic_traffic(args.seed, args.count, grid, args.profile)
    camp = run_campaign(SimulationObjective(plans, grid), budget=args.budget,
                        n_init=args.n_init, seed=args.seed, sim_seed=args.seed,
                        on_trial=lambda t: print(f"{t.index:3d} {t.phase:3s} {t.score:9.4f}"))
    print("best so far:", " ".join(f"{v:.2f}" for v in camp.best_trace))
    print("best params:", camp.best.raw)
    if camp.importance is not None:
        for n, w in sorted(zip(PROTOCOL_SPACE.names, camp.importance), key=lambda p: -p[1]):
            print(f"  {n:<22} {w:.3f}")


if __name__ == "__main__":
    main()
