"""Brute-force grid scoring, written without the package's geometry helpers."""

import statistics

import numpy as np

BANDS = (10_000.0, 20_000.0)  # lower edges of the upper two layers
STEP = 0.02  # s


def sample(plan, ts):
    w = np.array(plan.waypoints)
    return np.stack([np.interp(ts, w[:, 3], w[:, k]) for k in range(3)], axis=1)


def cells(xyz, rows, cols, side=100.0):
    r = np.minimum((xyz[:, 1] // (side / rows)).astype(int), rows - 1)
    c = np.minimum((xyz[:, 0] // (side / cols)).astype(int), cols - 1)
    layer = np.searchsorted(BANDS, xyz[:, 2], side="right")
    return (layer * rows + r) * cols + c


def occupancy_variance(snapshot, rows, cols):
    counts = [0] * (rows * cols * 3)
    xyz = np.array([(a.x, a.y, a.altitude) for a in snapshot.aircraft]).reshape(-1, 3)
    for k in cells(xyz, rows, cols, snapshot.region_side):
        counts[k] += 1
    return statistics.pvariance(counts)


def _crossings(a, b, step, n_lines):
    """(u, +1/-1) for each grid line strictly between coordinates a and b."""
    out = []
    if b > a:
        for k in range(int(a // step) + 1, n_lines + 1):
            if k * step >= b:
                break
            out.append(((k * step - a) / (b - a), 1))
    elif b < a:
        for k in range(int(a // step), -1, -1):
            if k * step <= b:
                break
            if k * step < a:
                out.append(((k * step - a) / (b - a), -1))
    return out


def handoffs(plan, rows, cols, side=100.0):
    """Cell changes along the plan by grid traversal: step the indices at each line crossing."""
    w = plan.waypoints
    x0, y0, z0 = w[0][:3]
    r = min(int(y0 // (side / rows)), rows - 1)
    c = min(int(x0 // (side / cols)), cols - 1)
    layer = int(np.searchsorted(BANDS, z0, side="right"))
    changes = 0
    for a, b in zip(w, w[1:]):
        ev = [(u, "c", d) for u, d in _crossings(a[0], b[0], side / cols, cols - 1)]
        ev += [(u, "r", d) for u, d in _crossings(a[1], b[1], side / rows, rows - 1)]
        for bound in BANDS:
            if (a[2] < bound <= b[2]) or (b[2] < bound <= a[2]):
                ev.append(((bound - a[2]) / (b[2] - a[2]), "l", 1 if b[2] > a[2] else -1))
        ev.sort()
        i = 0
        while i < len(ev):
            j = i
            while j < len(ev) and ev[j][0] == ev[i][0]:  # exact corner hits move diagonally
                _, axis, d = ev[j]
                if axis == "c":
                    c += d
                elif axis == "r":
                    r += d
                else:
                    layer += d
                j += 1
            changes += 1
            i = j
    return changes


def closest(a, b):
    lo, hi = max(a.start_time, b.start_time), min(a.end_time, b.end_time)
    if lo > hi:
        return None
    ts = np.append(np.arange(lo, hi, STEP), hi)
    pa, pb = sample(a, ts), sample(b, ts)
    dh = np.hypot(pa[:, 0] - pb[:, 0], pa[:, 1] - pb[:, 1])
    dv = np.abs(pa[:, 2] - pb[:, 2])
    i = int(np.argmin(dh))
    return bool(np.any((dh < 5.0) & (dv < 1000.0))), pa[i], pb[i]


def brute_scores(snapshot, plans, w=(1.0, 2.0, 10.0)):
    ps = sorted(plans, key=lambda p: p.owner)
    pairs = []
    for i in range(len(ps)):
        for j in range(i + 1, len(ps)):
            res = closest(ps[i], ps[j])
            if res is not None and res[0]:
                pairs.append(res[1:])
    out = {}
    for r in range(1, 6):
        for c in range(1, 6):
            var = occupancy_variance(snapshot, r, c)
            hand = sum(handoffs(p, r, c) for p in ps)
            risk = 0
            for pa, pb in pairs:
                xy = np.r_[pa[:2], pb[:2]]
                if np.all((xy >= 0) & (xy <= 100)):
                    ka, kb = cells(np.array([pa, pb]), r, c)
                    risk += int(ka != kb)
            out[(r, c)] = (var, hand, risk, w[0] * var + w[1] * hand + w[2] * risk)
    return out


def brute_label(scores):
    best = None
    for (r, c), (_, _, _, J) in scores.items():
        key = (J, r * c, r)
        if best is None or key < best[0]:
            best = (key, (r, c))
    return best[1]
