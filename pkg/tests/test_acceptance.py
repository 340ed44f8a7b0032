"""Acceptance checks, one test per criterion.

Each test records a PASS/FAIL line; the lines are printed together at the
end of the pytest run (and directly when this file is run as a script).
"""

import math
import random
import time
from functools import lru_cache

import numpy as np
import pytest

from datc.airspace import SectorGrid, generate_synthetic_traffic, snapshot_at
from datc.bo import (PROTOCOL_SPACE, TrialOutcome, expected_improvement, lhs_sample, matern52,
                     run_campaign, score)
from datc.cli import main
from datc.conflict import backtrack_speeds, conflicts_with_any, min_separation
from datc.des import DeliveryModel
from datc.harness import SimulationObjective, SweepSpec, run_sweep
from datc.sectorization import label_optimal_grid, score_all
from datc.simulation import SimConfig, simulate
from helpers import random_plan
from paxos_models import explore
from sector_oracle import brute_label, brute_scores, sample

RESULTS: dict = {}


def record(n: int, ok: bool, detail: str):
    RESULTS[n] = f"{'PASS' if ok else 'FAIL'}  criterion {n:2d}: {detail}"
    assert ok, RESULTS[n]


# -- 1 and 3: fuzzed safety and TAP agreement ---------------------------------------

FAULTS = [(loss, reorder, jitter) for loss in (0.0, 0.2, 0.5) for reorder in (False, True)
          for jitter in (0.0, 0.03)]


@lru_cache(maxsize=None)
def fuzz_runs(n: int = 500):
    out = []
    t0 = time.perf_counter()
    for i in range(n):
        loss, reorder, jitter = FAULTS[i % len(FAULTS)]
        rng = random.Random(f"fuzz:{i}")
        grid = SectorGrid(rng.randint(1, 3), rng.randint(1, 3))
        plans = generate_synthetic_traffic(i, rng.randint(2, 20), grid,
                                           rng.choice(["random", "converging"]))
        d = DeliveryModel(loss=loss, reorder=reorder, jitter=jitter, seed=i)
        r = simulate(plans, SimConfig(grid=grid, delivery=d, seed=i))
        out.append((loss, r.violations, r.metrics.timeout))
    return out, time.perf_counter() - t0


def test_c01_safety_fuzz():
    runs, secs = fuzz_runs()
    conflicts = sum(1 for _, v, _ in runs for x in v if x[0] == "conflict")
    agreement = sum(1 for _, v, _ in runs for x in v if x[0] == "agreement")
    timeouts = sum(t for _, _, t in runs)
    ok = conflicts == 0 and agreement == 0 and timeouts == 0 and secs <= 600
    record(1, ok, f"{len(runs)} fuzz scenarios, {conflicts} co-admitted conflicts, "
                  f"{agreement} split decisions, {timeouts} timeouts, {secs:.0f} s")


def test_c03_tap_agreement():
    runs, _ = fuzz_runs()
    bad = sum(1 for _, v, _ in runs for x in v if x[0] in ("tap_digest", "final_digest"))
    lossy = sum(1 for loss, _, _ in runs if loss == 0.2)
    record(3, bad == 0, f"{bad} digest mismatches across {len(runs)} runs "
                        f"({lossy} at 20% loss)")


# -- 2: Paxos interleavings -----------------------------------------------------------

def test_c02_paxos_oracle():
    t0 = time.perf_counter()
    total, same = 0, True
    for n_prop, rounds in ((1, 1), (1, 2), (2, 1)):
        g = explore("gate", n_prop, rounds)
        ref = explore("textbook", n_prop, rounds)
        same &= g[2] == ref[2] and g[1] == ref[1]
        total += g[1]
    secs = time.perf_counter() - t0
    record(2, same and secs <= 120,
           f"{total} terminal executions, reachable decisions identical, {secs:.0f} s")


# -- 4: entry success floor -----------------------------------------------------------

def test_c04_entry_success():
    worst = (2.0, None)
    for g in ("2x2", "4x4"):
        for n in (10, 20, 30, 40, 50, 60):
            rows, cols = map(int, g.split("x"))
            grid = SectorGrid(rows, cols)
            r = simulate(generate_synthetic_traffic(0, n, grid, "random"), SimConfig(grid=grid))
            worst = min(worst, (r.metrics.r_success, f"{g}/{n}"), key=lambda w: w[0])
    record(4, worst[0] >= 0.96, f"lowest entry success {worst[0]:.3f} at {worst[1]}")


# -- 5: NMAC direction ----------------------------------------------------------------

def test_c05_nmac_direction():
    totals = {}
    for prof in ("random", "converging"):
        rows = run_sweep(SweepSpec(("2x2", "4x4", "8x8"), (160,), profile=prof,
                                   repetitions=5))
        t = {g: sum(r["nmacs"] for r in rows if r["grid"] == g) for g in ("2x2", "4x4", "8x8")}
        totals[prof] = t
    rnd, conv = totals["random"], totals["converging"]
    ok = rnd["2x2"] > max(rnd["4x4"], rnd["8x8"]) and conv["2x2"] < min(conv["4x4"],
                                                                        conv["8x8"])
    record(5, ok, f"NMACs over 5 seeds at 160 aircraft, random {rnd}, converging {conv}")


# -- 6: geometry ---------------------------------------------------------------------

def _dense_min(a, b, step=0.1):
    lo, hi = max(a.start_time, b.start_time), min(a.end_time, b.end_time)
    ts = np.append(np.arange(lo, hi, step), hi)
    pa, pb = sample(a, ts), sample(b, ts)
    return float(np.hypot(pa[:, 0] - pb[:, 0], pa[:, 1] - pb[:, 1]).min())


def _dense_conflict(a, b, step=0.1):
    lo, hi = max(a.start_time, b.start_time), min(a.end_time, b.end_time)
    if lo > hi:
        return False
    ts = np.append(np.arange(lo, hi, step), hi)
    pa, pb = sample(a, ts), sample(b, ts)
    dh = np.hypot(pa[:, 0] - pb[:, 0], pa[:, 1] - pb[:, 1])
    return bool(np.any((dh < 5.0) & (np.abs(pa[:, 2] - pb[:, 2]) < 1000.0)))


def test_c06_geometry_oracle():
    rng = random.Random(6)
    worst, pairs = 0.0, 0
    while pairs < 1000:
        a = random_plan(rng, 1, legs=rng.randint(1, 3))
        b = random_plan(rng, 2, legs=rng.randint(1, 3))
        got = min_separation(a, b)
        if got is None:
            continue
        pairs += 1
        worst = max(worst, abs(_dense_min(a, b) - got[1]))
    solved = clean = 0
    rng = random.Random(66)
    while solved < 200:
        cand = random_plan(rng, 0, side=40.0, legs=1)
        others = [random_plan(rng, k, side=40.0, legs=1) for k in (1, 2)]
        if not conflicts_with_any(cand, others):
            continue
        fixed = backtrack_speeds(cand, others)
        if fixed is None:
            continue
        solved += 1
        clean += all(not _dense_conflict(fixed, o) for o in others)
    ok = worst <= 0.01 and clean == solved
    record(6, ok, f"max |d_h - oracle| {worst:.4f} NM over {pairs} pairs, "
                  f"{clean}/{solved} speed solutions conflict-free")


# -- 7: sectorization ------------------------------------------------------------------

def test_c07_sectorization_oracle():
    comp_ok = lab_ok = 0
    for seed in range(100):
        rng = random.Random(seed)
        plans = [random_plan(rng, i, t_max=60, legs=rng.randint(1, 2))
                 for i in range(rng.randint(2, 10))]
        active = [p for p in plans if p.start_time <= 80.0 <= p.end_time]
        snap = snapshot_at(plans, 80.0)
        ref = brute_scores(snap, active)
        scores = score_all(snap, active)
        comp_ok += all((s.handoff_count, s.risk_pair_count) == ref[(s.rows, s.cols)][1:3]
                       and abs(s.occupancy_variance - ref[(s.rows, s.cols)][0]) <= 1e-9
                       for s in scores)
        lab_ok += label_optimal_grid(snap, active, scores=scores) == brute_label(ref)
    record(7, comp_ok == lab_ok == 100,
           f"components match {comp_ok}/100, labels match {lab_ok}/100")


# -- 8: score table ---------------------------------------------------------------------

def test_c08_score_table():
    from test_bo import score_table
    table = score_table()
    hits = sum(score(*args) == float(exp) for args, exp in table)
    overrides = sum(a[4] or a[5] for a, _ in table)
    record(8, hits == len(table) == 50,
           f"{hits}/{len(table)} exact, {overrides} override cases")


# -- 9: GP / EI numerics -----------------------------------------------------------------

def test_c09_gp_numerics():
    from test_bo import INV_SQRT_2PI, MATERN_AT_ONE
    m_err = abs(matern52([[0.0]], [[1.0]], 1.0, 1.0)[0, 0] - MATERN_AT_ONE)
    e_err = abs(expected_improvement(0.0, 1.0, 0.0) - INV_SQRT_2PI)
    rng = np.random.default_rng(11)
    mc_ok = 0
    for _ in range(100):
        sigma, best, z = rng.uniform(0.05, 3), rng.normal(0, 2), rng.uniform(-3, 3)
        mu = best + z * sigma
        draws = np.maximum(rng.normal(mu, sigma, 200_000) - best, 0.0)
        se = draws.std(ddof=1) / math.sqrt(len(draws))
        mc_ok += abs(expected_improvement(mu, sigma, best) - draws.mean()) <= 3 * se
    strata_ok = 0
    for n in range(2, 51):
        u = lhs_sample(n, PROTOCOL_SPACE, seed=n)
        strata_ok += all(sorted(np.floor(u[:, j] * n).astype(int)) == list(range(n))
                         for j in range(u.shape[1]))
    ok = m_err <= 1e-12 and e_err <= 1e-12 and mc_ok == 100 and strata_ok == 49
    record(9, ok, f"Matern err {m_err:.1e}, EI(0,1) err {e_err:.1e}, "
                  f"MC {mc_ok}/100, LHS strata {strata_ok}/49")


# -- 10: BO end to end -----------------------------------------------------------------

ACTIVE = (0, 3)


def synthetic_objective(params, _seed):
    u = PROTOCOL_SPACE.to_unit(np.array([[params[k] for k in PROTOCOL_SPACE.names]]))[0]
    val = 100.0 - 400.0 * ((u[0] - 0.3) ** 2 + (u[3] - 0.7) ** 2)
    return TrialOutcome(0, 0, 0, 0, value=val)


def test_c10_bo_benchmark():
    t0 = time.perf_counter()
    hits, conc = 0, []
    for seed in range(10):
        c = run_campaign(synthetic_objective, PROTOCOL_SPACE, budget=50, n_init=10, seed=seed)
        hits += c.best.score >= 95.0
        conc.append(float(c.importance[list(ACTIVE)].sum()))
    secs = time.perf_counter() - t0
    ok = hits >= 9 and min(conc) >= 0.8 and secs <= 300
    record(10, ok, f"{hits}/10 seeds within 5% of optimum, active-dim importance "
                   f">= {min(conc):.3f}, {secs:.0f} s")


# -- 11: determinism ------------------------------------------------------------------

def test_c11_determinism(tmp_path, capsys):
    from test_harness_cli import COMMANDS, tree
    same = 0
    for argv in COMMANDS:
        outs = []
        for k in "ab":
            d = tmp_path / f"{argv[0]}_{k}"
            assert main(argv + ["--out", str(d)]) == 0
            stdout = capsys.readouterr().out.replace(str(d), "<out>")
            outs.append((tree(d), stdout))
        same += outs[0] == outs[1]
    record(11, same == len(COMMANDS), f"{same}/{len(COMMANDS)} commands byte-identical")


# -- 12: desk tuning demo --------------------------------------------------------------

def test_c12_tuning_demo():
    grid = SectorGrid(2, 2)
    plans = generate_synthetic_traffic(0, 10, grid, "random")
    t0 = time.perf_counter()
    c = run_campaign(SimulationObjective(plans, grid), budget=12, n_init=6, seed=0)
    secs = time.perf_counter() - t0
    worst_lhs = min(t.score for t in c.trials if t.phase == "lhs")
    ok = c.best.score > worst_lhs and secs <= 300
    record(12, ok, f"best {c.best.score:.2f} > worst LHS {worst_lhs:.2f} "
                   f"after {len(c.trials)} trials, {secs:.1f} s")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
