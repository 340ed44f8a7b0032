import math
import random

import numpy as np

from datc.airspace import FlightPlan, straight_plan


def random_plan(rng: random.Random, owner: int, side: float = 100.0, t_max: float = 600.0,
                legs: int = 1) -> FlightPlan:
    speed = rng.uniform(420.0, 480.0)
    pts = [(rng.uniform(0, side), rng.uniform(0, side), rng.choice([30000.0, 31000.0, 34000.0]))]
    for _ in range(legs):
        while True:
            q = (rng.uniform(0, side), rng.uniform(0, side), rng.choice([30000.0, 34000.0]))
            if math.hypot(q[0] - pts[-1][0], q[1] - pts[-1][1]) > 1.0:
                break
        pts.append(q)
    t = rng.uniform(0, t_max)
    wps = [(*pts[0], t)]
    for a, b in zip(pts, pts[1:]):
        t += math.hypot(b[0] - a[0], b[1] - a[1]) / speed * 3600.0
        wps.append((*b, t))
    return FlightPlan(owner, wps, speed)


def dense_min_horizontal(a: FlightPlan, b: FlightPlan, step: float = 0.1):
    """Brute-force closest horizontal approach on a fixed time grid."""
    lo = max(a.start_time, b.start_time)
    hi = min(a.end_time, b.end_time)
    if lo > hi:
        return None
    ts = np.append(np.arange(lo, hi, step), hi)
    best = (math.inf, lo)
    for t in ts:
        pa, pb = a.position(t), b.position(t)
        d = math.hypot(pa[0] - pb[0], pa[1] - pb[1])
        if d < best[0]:
            best = (d, t)
    return best


def dense_conflict(a: FlightPlan, b: FlightPlan, h: float = 5.0, v: float = 1000.0,
                   step: float = 0.1) -> bool:
    lo = max(a.start_time, b.start_time)
    hi = min(a.end_time, b.end_time)
    if lo > hi:
        return False
    for t in np.append(np.arange(lo, hi, step), hi):
        pa, pb = a.position(t), b.position(t)
        if math.hypot(pa[0] - pb[0], pa[1] - pb[1]) < h and abs(pa[2] - pb[2]) < v:
            return True
    return False


def head_on(owner_a=1, owner_b=2, alt_b=30000.0, t0=0.0):
    a = straight_plan(owner_a, (0.0, 50.0, 30000.0), (100.0, 50.0, 30000.0), t0, 450.0)
    b = straight_plan(owner_b, (100.0, 50.0, alt_b), (0.0, 50.0, alt_b), t0, 450.0)
    return a, b
