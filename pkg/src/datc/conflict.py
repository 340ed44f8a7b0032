"""Pairwise 4D conflict detection and resolution over piecewise-linear plans."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

from .airspace import FlightPlan

FT_PER_NM = 6076.12


@dataclass(frozen=True)
class SeparationMinima:
    horizontal: float = 5.0  # NM
    vertical: float = 1000.0  # ft

    def __post_init__(self):
        if self.horizontal <= 0 or self.vertical <= 0:
            raise ValueError("separation minima must be positive")


@dataclass(frozen=True)
class NmacThreshold:
    horizontal: float = 500.0 / FT_PER_NM  # NM
    vertical: float = 100.0  # ft

    def __post_init__(self):
        if self.horizontal <= 0 or self.vertical <= 0:
            raise ValueError("NMAC thresholds must be positive")


DEFAULT_MINIMA = SeparationMinima()
DEFAULT_NMAC = NmacThreshold()


@dataclass(frozen=True)
class ConflictReport:
    pair: tuple[int, int]
    time: float
    horizontal: float
    vertical: float
    severity: str  # "loss_of_separation" | "nmac"

    @property
    def is_nmac(self) -> bool:
        return self.severity == "nmac"


class PreconditionError(ValueError):
    """Operation called outside its contract."""


def _segments(a: FlightPlan, b: FlightPlan, lo: float, hi: float) -> Iterator[tuple]:
    """Yield ``(t0, t1, ra0, ra1)`` where ``ra`` is b-relative position of a.

    Relative positions are (dx, dy, dz) at the interval ends. Intervals
    cover ``[lo, hi]`` split at every waypoint time of either plan.
    """
    times = {lo, hi}
    times.update(w[3] for w in a.waypoints if lo < w[3] < hi)
    times.update(w[3] for w in b.waypoints if lo < w[3] < hi)
    ts = sorted(times)

    def rel(t):
        pa = a.position(t)
        pb = b.position(t)
        return (pa[0] - pb[0], pa[1] - pb[1], pa[2] - pb[2])

    prev_t = ts[0]
    prev_r = rel(prev_t)
    if len(ts) == 1:
        yield prev_t, prev_t, prev_r, prev_r
        return
    for t in ts[1:]:
        r = rel(t)
        yield prev_t, t, prev_r, r
        prev_t, prev_r = t, r


def _overlap(a: FlightPlan, b: FlightPlan) -> Optional[tuple[float, float]]:
    lo = max(a.start_time, b.start_time)
    hi = min(a.end_time, b.end_time)
    if lo > hi:
        return None
    return lo, hi


def _closest_u(r0, r1, u_lo=0.0, u_hi=1.0) -> float:
    dx, dy = r1[0] - r0[0], r1[1] - r0[1]
    dd = dx * dx + dy * dy
    if dd == 0.0:
        return u_lo
    u = -(r0[0] * dx + r0[1] * dy) / dd
    return min(max(u, u_lo), u_hi)


def _interp(r0, r1, u):
    return tuple(p + u * (q - p) for p, q in zip(r0, r1))


def min_separation(a: FlightPlan, b: FlightPlan) -> Optional[tuple[float, float, float]]:
    """Closest horizontal approach ``(t*, d_h, d_v)`` over the shared time window.

    Returns ``None`` when the two plans never coexist in time. Ties in
    ``d_h`` resolve to the earliest instant.
    """
    win = _overlap(a, b)
    if win is None:
        return None
    best = None
    for t0, t1, r0, r1 in _segments(a, b, *win):
        u = _closest_u(r0, r1)
        r = _interp(r0, r1, u)
        dh = math.hypot(r[0], r[1])
        if best is None or dh < best[1] - 1e-12:
            best = (t0 + u * (t1 - t0), dh, abs(r[2]))
    return best


def _open_interval_quadratic(r0, r1, limit: float) -> Optional[tuple[float, float]]:
    """Open u-interval where horizontal distance < limit (unbounded, before clipping)."""
    dx, dy = r1[0] - r0[0], r1[1] - r0[1]
    A = dx * dx + dy * dy
    B = 2.0 * (r0[0] * dx + r0[1] * dy)
    C = r0[0] * r0[0] + r0[1] * r0[1] - limit * limit
    if A == 0.0:
        return (-math.inf, math.inf) if C < 0 else None
    disc = B * B - 4 * A * C
    if disc <= 0:
        return None
    sq = math.sqrt(disc)
    return ((-B - sq) / (2 * A), (-B + sq) / (2 * A))


def _open_interval_linear(z0: float, z1: float, limit: float) -> Optional[tuple[float, float]]:
    dz = z1 - z0
    if dz == 0.0:
        return (-math.inf, math.inf) if abs(z0) < limit else None
    ua = (-limit - z0) / dz
    ub = (limit - z0) / dz
    return (min(ua, ub), max(ua, ub))


def _violation_window(r0, r1, h: float, v: float) -> Optional[tuple[float, float]]:
    """Sub-interval of [0, 1] where both distances fall strictly below the limits."""
    ih = _open_interval_quadratic(r0, r1, h)
    if ih is None:
        return None
    iv = _open_interval_linear(r0[2], r1[2], v)
    if iv is None:
        return None
    lo = max(ih[0], iv[0], 0.0)
    hi = min(ih[1], iv[1], 1.0)
    if lo < hi:
        return lo, hi
    if lo == hi:
        r = _interp(r0, r1, lo)
        if math.hypot(r[0], r[1]) < h and abs(r[2]) < v:
            return lo, hi
    return None


def _first_violation(a: FlightPlan, b: FlightPlan, h: float, v: float,
                     stop_early: bool = False) -> Optional[tuple[float, float, float]]:
    win = _overlap(a, b)
    if win is None:
        return None
    best = None
    for t0, t1, r0, r1 in _segments(a, b, *win):
        w = _violation_window(r0, r1, h, v)
        if w is None:
            continue
        u = _closest_u(r0, r1, *w)
        r = _interp(r0, r1, u)
        dh = math.hypot(r[0], r[1])
        if best is None or dh < best[1] - 1e-12:
            best = (t0 + u * (t1 - t0), dh, abs(r[2]))
        if stop_early:
            break
    return best


def _may_overlap(a: FlightPlan, b: FlightPlan, h: float, v: float) -> bool:
    if a.start_time > b.end_time or b.start_time > a.end_time:
        return False
    ax = [w[0] for w in a.waypoints]
    bx = [w[0] for w in b.waypoints]
    if min(ax) - max(bx) >= h or min(bx) - max(ax) >= h:
        return False
    ay = [w[1] for w in a.waypoints]
    by = [w[1] for w in b.waypoints]
    if min(ay) - max(by) >= h or min(by) - max(ay) >= h:
        return False
    az = [w[2] for w in a.waypoints]
    bz = [w[2] for w in b.waypoints]
    if min(az) - max(bz) >= v or min(bz) - max(az) >= v:
        return False
    return True


def detect_conflict(a: FlightPlan, b: FlightPlan,
                    minima: SeparationMinima = DEFAULT_MINIMA,
                    nmac: NmacThreshold = DEFAULT_NMAC) -> Optional[ConflictReport]:
    """Report a loss of separation between ``a`` and ``b``, or ``None``.

    A conflict needs both the horizontal and the vertical distance strictly
    under the minima at the same instant. The reported time is the closest
    horizontal approach inside the violation window.
    """
    if not _may_overlap(a, b, minima.horizontal, minima.vertical):
        return None
    hit = _first_violation(a, b, minima.horizontal, minima.vertical)
    if hit is None:
        return None
    severity = "loss_of_separation"
    if _first_violation(a, b, nmac.horizontal, nmac.vertical, stop_early=True) is not None:
        severity = "nmac"
    pair = (min(a.owner, b.owner), max(a.owner, b.owner))
    return ConflictReport(pair, hit[0], hit[1], hit[2], severity)


def conflicts_with_any(plan: FlightPlan, others: Iterable[FlightPlan],
                       minima: SeparationMinima = DEFAULT_MINIMA,
                       meter: Optional["CheckMeter"] = None) -> bool:
    for o in others:
        if meter is not None:
            meter.charge()
        if _may_overlap(plan, o, minima.horizontal, minima.vertical) and \
                _first_violation(plan, o, minima.horizontal, minima.vertical, stop_early=True):
            return True
    return False


class BudgetExhausted(Exception):
    pass


class CheckMeter:
    """Counts pairwise checks and converts them to simulated solver time.

    Solver time is charged at ``check_cost`` seconds per pairwise check so
    that runs stay deterministic; ``limit`` (seconds) raises
    :class:`BudgetExhausted` once exceeded.
    """

    def __init__(self, check_cost: float = 1e-3, limit: float = math.inf):
        self.check_cost = check_cost
        self.limit = limit
        self.checks = 0

    @property
    def elapsed(self) -> float:
        return self.checks * self.check_cost

    def charge(self, n: int = 1):
        self.checks += n
        if self.elapsed > self.limit:
            raise BudgetExhausted


COARSE_STEP = 0.05
FINE_STEP = 0.01


def _factor_grid(lo: float, hi: float, step: float) -> list[float]:
    n = int(round((hi - lo) / step))
    return [round(lo + i * step, 10) for i in range(n + 1)]


def _closeness_key(f: float):
    return (abs(f - 1.0), f)


def backtrack_speeds(candidate: FlightPlan, admitted: Sequence[FlightPlan],
                     bounds: tuple[float, float] = (0.7, 1.3),
                     solver_timeout: float = math.inf,
                     minima: SeparationMinima = DEFAULT_MINIMA,
                     meter: Optional[CheckMeter] = None) -> Optional[FlightPlan]:
    """Find a uniform speed factor that clears every admitted plan.

    Coarse pass over ``bounds`` at 0.05 steps; the feasible factor closest
    to 1 is then refined at 0.01 steps toward 1. When no coarse factor is
    feasible, the factor with the largest worst-case horizontal miss is
    refined within one coarse step. Returns ``None`` on failure or when
    the check budget (``solver_timeout`` seconds of simulated solver time)
    runs out. Admitted plans are never modified.
    """
    if not admitted:
        raise PreconditionError("backtrack_speeds needs at least one admitted plan")
    if meter is None:
        meter = CheckMeter(limit=solver_timeout)
    else:
        meter.limit = min(meter.limit, meter.elapsed + solver_timeout)
    if not conflicts_with_any(candidate, admitted, minima, meter=None):
        raise PreconditionError("candidate has no conflict to resolve")

    def feasible(f: float) -> bool:
        return not conflicts_with_any(candidate.retimed(f), admitted, minima, meter)

    def worst_miss(f: float) -> float:
        p = candidate.retimed(f)
        worst = math.inf
        for o in admitted:
            meter.charge()
            s = min_separation(p, o)
            if s is not None and abs(s[2]) < minima.vertical:
                worst = min(worst, s[1])
        return worst

    lo, hi = bounds
    try:
        coarse = [f for f in _factor_grid(lo, hi, COARSE_STEP) if f != 1.0]
        ok = [f for f in coarse if feasible(f)]
        if ok:
            best = min(ok, key=_closeness_key)
            a, b = sorted((best, 1.0))
            fine = [f for f in _factor_grid(a, b, FINE_STEP) if lo <= f <= hi and f != 1.0]
            fine_ok = [best] + [f for f in fine if f != best and feasible(f)]
            best = min(fine_ok, key=_closeness_key)
            return candidate.retimed(best)
        centre = max(coarse, key=lambda f: (worst_miss(f), -abs(f - 1.0)))
        fine = [f for f in _factor_grid(max(lo, centre - COARSE_STEP),
                                        min(hi, centre + COARSE_STEP), FINE_STEP)
                if f != 1.0 and f not in coarse]
        fine_ok = [f for f in fine if feasible(f)]
        if fine_ok:
            return candidate.retimed(min(fine_ok, key=_closeness_key))
    except BudgetExhausted:
        return None
    return None


def assign_holding(candidate: FlightPlan, admitted: Sequence[FlightPlan],
                   hold_quantum: float = 60.0, max_holds: int = 10,
                   minima: SeparationMinima = DEFAULT_MINIMA,
                   meter: Optional[CheckMeter] = None) -> Optional[tuple[FlightPlan, int]]:
    """Delay the whole candidate by the smallest ``k * hold_quantum`` that clears it.

    Returns ``(plan, k)`` or ``None`` when no ``k`` in ``1..max_holds`` works.
    """
    if not admitted:
        raise PreconditionError("assign_holding needs at least one admitted plan")
    try:
        for k in range(1, max_holds + 1):
            p = candidate.shifted(k * hold_quantum)
            if not conflicts_with_any(p, admitted, minima, meter):
                return p, k
    except BudgetExhausted:
        return None
    return None


def scan_nmacs(trajectories: Sequence[FlightPlan],
               nmac: NmacThreshold = DEFAULT_NMAC) -> list[ConflictReport]:
    """All NMAC pairs among flown trajectories, ordered by pair id."""
    items = sorted(trajectories, key=lambda p: p.owner)
    boxes = []
    for p in items:
        xs = [w[0] for w in p.waypoints]
        ys = [w[1] for w in p.waypoints]
        zs = [w[2] for w in p.waypoints]
        boxes.append((p.start_time, p.end_time, min(xs), max(xs), min(ys), max(ys),
                      min(zs), max(zs)))
    h, v = nmac.horizontal, nmac.vertical
    out = []
    for i in range(len(items)):
        bi = boxes[i]
        for j in range(i + 1, len(items)):
            bj = boxes[j]
            if bi[0] > bj[1] or bj[0] > bi[1]:
                continue
            if bi[2] - bj[3] >= h or bj[2] - bi[3] >= h or bi[4] - bj[5] >= h \
                    or bj[4] - bi[5] >= h or bi[6] - bj[7] >= v or bj[6] - bi[7] >= v:
                continue
            hit = _first_violation(items[i], items[j], h, v)
            if hit is not None:
                pair = (items[i].owner, items[j].owner)
                out.append(ConflictReport(pair, hit[0], hit[1], hit[2], "nmac"))
    return out
