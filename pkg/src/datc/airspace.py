"""Airspace model: traffic snapshots, sector grids, flight plans.

Units are fixed throughout the package: nautical miles for horizontal
distance, feet for altitude, knots for speed and seconds for time.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

REGION_SIDE_NM = 100.0
ALTITUDE_BANDS = ((0.0, 10_000.0), (10_000.0, 18_000.0), (18_000.0, math.inf))
SPEED_RTOL = 1e-6


class OutOfBoundsError(ValueError):
    """A position lies outside the study region."""


@dataclass(frozen=True)
class AircraftState:
    id: int
    x: float
    y: float
    altitude: float
    heading: float
    ground_speed: float
    fuel_remaining: float = 120.0

    def __post_init__(self):
        if self.altitude < 0:
            raise ValueError(f"aircraft {self.id}: negative altitude")
        if self.ground_speed <= 0:
            raise ValueError(f"aircraft {self.id}: ground speed must be positive")
        if self.fuel_remaining < 0:
            raise ValueError(f"aircraft {self.id}: negative fuel")
        if not 0.0 <= self.heading < 360.0:
            object.__setattr__(self, "heading", self.heading % 360.0)


@dataclass(frozen=True)
class TrafficSnapshot:
    aircraft: tuple[AircraftState, ...] = ()
    region_side: float = REGION_SIDE_NM
    timestamp: float = 0.0
    day_of_week: int = 0
    hour_of_day: int = 12

    def __post_init__(self):
        object.__setattr__(self, "aircraft", tuple(self.aircraft))
        ids = [a.id for a in self.aircraft]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate aircraft ids in snapshot")
        for a in self.aircraft:
            if not (0 <= a.x <= self.region_side and 0 <= a.y <= self.region_side):
                raise OutOfBoundsError(f"aircraft {a.id} at ({a.x}, {a.y}) outside region")
        if not 0 <= self.day_of_week <= 6:
            raise ValueError("day_of_week must be in 0..6")
        if not 0 <= self.hour_of_day <= 23:
            raise ValueError("hour_of_day must be in 0..23")


class SectorId(NamedTuple):
    row: int
    col: int
    layer: int

    def __str__(self):
        return f"{self.row}.{self.col}.{self.layer}"


@dataclass(frozen=True)
class SectorGrid:
    rows: int
    cols: int
    region_side: float = REGION_SIDE_NM
    layers: int = 3
    altitude_bands: tuple = ALTITUDE_BANDS

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid needs at least one row and one column")
        if self.layers != len(self.altitude_bands):
            raise ValueError("layers must match the number of altitude bands")

    @property
    def cell_width(self) -> float:
        return self.region_side / self.cols

    @property
    def cell_height(self) -> float:
        return self.region_side / self.rows

    @property
    def n_sectors(self) -> int:
        return self.rows * self.cols * self.layers

    def sectors(self) -> list[SectorId]:
        return [SectorId(r, c, l) for l in range(self.layers)
                for r in range(self.rows) for c in range(self.cols)]

    def layer_of(self, altitude: float) -> int:
        if altitude < 0:
            raise OutOfBoundsError(f"negative altitude {altitude}")
        for i, (lo, hi) in enumerate(self.altitude_bands):
            if lo <= altitude < hi:
                return i
        return self.layers - 1


def sector_of(grid: SectorGrid, x: float, y: float, altitude: float) -> SectorId:
    """Map a position to its sector.

    Points on an internal grid line belong to the higher-index cell; the
    far region edge is clamped into the last cell.
    """
    side = grid.region_side
    if not (0 <= x <= side and 0 <= y <= side):
        raise OutOfBoundsError(f"({x}, {y}) outside {side} NM region")
    row = min(int(math.floor(y / grid.cell_height)), grid.rows - 1)
    col = min(int(math.floor(x / grid.cell_width)), grid.cols - 1)
    return SectorId(row, col, grid.layer_of(altitude))


Waypoint = tuple  # (x_nm, y_nm, alt_ft, t_s)


@dataclass(frozen=True)
class FlightPlan:
    """Timestamped piecewise-linear 4D trajectory.

    ``ground_speed`` is the nominal horizontal speed the plan was built
    with. Flown trajectories (which include loiters) reuse this type but
    are not expected to pass :meth:`check_speed`.
    """

    owner: int
    waypoints: tuple
    ground_speed: float

    def __post_init__(self):
        wps = tuple(tuple(float(v) for v in w) for w in self.waypoints)
        object.__setattr__(self, "waypoints", wps)
        if len(wps) < 1:
            raise ValueError("plan needs at least one waypoint")
        for a, b in zip(wps, wps[1:]):
            if not b[3] > a[3]:
                raise ValueError(f"plan {self.owner}: waypoint times must strictly increase")
        if self.ground_speed <= 0:
            raise ValueError("ground speed must be positive")

    @property
    def start_time(self) -> float:
        return self.waypoints[0][3]

    @property
    def end_time(self) -> float:
        return self.waypoints[-1][3]

    @property
    def duration(self) -> float:
        return self.end_time - self.start_time

    def check_speed(self, rtol: float = SPEED_RTOL) -> bool:
        for a, b in zip(self.waypoints, self.waypoints[1:]):
            v = math.hypot(b[0] - a[0], b[1] - a[1]) / (b[3] - a[3]) * 3600.0
            if abs(v - self.ground_speed) > rtol * self.ground_speed:
                return False
        return True

    def position(self, t: float) -> tuple[float, float, float]:
        """Interpolated (x, y, alt) at time ``t`` (clamped to the plan window)."""
        wps = self.waypoints
        if t <= wps[0][3]:
            return wps[0][:3]
        if t >= wps[-1][3]:
            return wps[-1][:3]
        lo, hi = 0, len(wps) - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if wps[mid][3] <= t:
                lo = mid
            else:
                hi = mid
        a, b = wps[lo], wps[hi]
        u = (t - a[3]) / (b[3] - a[3])
        return (a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1]), a[2] + u * (b[2] - a[2]))

    def clip(self, t0: float, t1: float) -> FlightPlan:
        """Portion of the plan inside ``[t0, t1]``."""
        t0 = max(t0, self.start_time)
        t1 = min(t1, self.end_time)
        if t1 < t0:
            raise ValueError("empty clip window")
        inner = [w for w in self.waypoints if t0 < w[3] < t1]
        pts = [(*self.position(t0), t0)] + inner
        if t1 > t0:
            pts.append((*self.position(t1), t1))
        return FlightPlan(self.owner, pts, self.ground_speed)

    def shifted(self, dt: float) -> FlightPlan:
        return FlightPlan(self.owner, [(x, y, z, t + dt) for x, y, z, t in self.waypoints],
                          self.ground_speed)

    def retimed(self, factor: float) -> FlightPlan:
        """Same path flown at ``factor`` times the ground speed, anchored at the start."""
        t0 = self.start_time
        return FlightPlan(self.owner,
                          [(x, y, z, t0 + (t - t0) / factor) for x, y, z, t in self.waypoints],
                          self.ground_speed * factor)

    def with_owner(self, owner: int) -> FlightPlan:
        return FlightPlan(owner, self.waypoints, self.ground_speed)


def straight_plan(owner: int, start: Sequence[float], end: Sequence[float],
                  t0: float, speed: float) -> FlightPlan:
    """Constant-speed plan from ``start`` (x, y, alt) to ``end``."""
    dist = math.hypot(end[0] - start[0], end[1] - start[1])
    if dist == 0:
        raise ValueError("degenerate straight plan")
    t1 = t0 + dist / speed * 3600.0
    return FlightPlan(owner, [(*start[:3], t0), (*end[:3], t1)], speed)


class SectorVisit(NamedTuple):
    sector: SectorId
    t_in: float
    t_out: float


class SectorRoute(list):
    """List of :class:`SectorVisit`; ``truncated`` is set when the plan leaves the region."""

    truncated: bool = False


_EPS_U = 1e-9  # breakpoints closer than this to a piece end are rounding noise


def _piece_breaks(grid: SectorGrid, a, b) -> list[float]:
    us = {0.0, 1.0}
    for axis, step, n in ((0, grid.cell_width, grid.cols), (1, grid.cell_height, grid.rows)):
        da = b[axis] - a[axis]
        if da == 0:
            continue
        for k in range(0, n + 1):
            u = (k * step - a[axis]) / da
            if _EPS_U < u < 1.0 - _EPS_U:
                us.add(u)
    dz = b[2] - a[2]
    if dz != 0:
        for lo, _ in grid.altitude_bands[1:]:
            u = (lo - a[2]) / dz
            if _EPS_U < u < 1.0 - _EPS_U:
                us.add(u)
    return sorted(us)


def sectors_crossed(grid: SectorGrid, plan: FlightPlan) -> SectorRoute:
    """Ordered sector visits along ``plan``.

    Each linear piece is split at every grid line and band boundary it
    crosses; sub-pieces are classified by their midpoint. Portions outside
    the region are dropped and flag the route as truncated.
    """
    route = SectorRoute()
    side = grid.region_side
    wps = plan.waypoints
    pieces = list(zip(wps, wps[1:])) or [(wps[0], wps[0])]
    for a, b in pieces:
        us = _piece_breaks(grid, a, b)
        for u0, u1 in zip(us, us[1:]):
            um = 0.5 * (u0 + u1)
            x = a[0] + um * (b[0] - a[0])
            y = a[1] + um * (b[1] - a[1])
            z = a[2] + um * (b[2] - a[2])
            t_in = a[3] + u0 * (b[3] - a[3])
            t_out = a[3] + u1 * (b[3] - a[3])
            if not (0 <= x <= side and 0 <= y <= side):
                route.truncated = True
                continue
            sid = sector_of(grid, x, y, max(z, 0.0))
            if route and route[-1].sector == sid and math.isclose(route[-1].t_out, t_in, abs_tol=1e-9):
                route[-1] = SectorVisit(sid, route[-1].t_in, t_out)
            else:
                route.append(SectorVisit(sid, t_in, t_out))
    return route


# -- synthetic traffic -------------------------------------------------------

RANDOM_LEVELS = (6_000.0, 8_000.0, 12_000.0, 16_000.0, 24_000.0, 30_000.0)
RANDOM_SPEED_KT = (420.0, 480.0)
CONVERGING_SPEED_KT = (250.0, 300.0)
CONVERGING_CORRIDORS = 8
CONVERGING_DISK_NM = 10.0
ENTRY_WINDOW_S = 240.0


def _perimeter_point(side: float, s: float) -> tuple[float, float, int]:
    """Point at arc length ``s`` along the region perimeter, with its edge index."""
    s %= 4 * side
    edge = int(s // side)
    r = s - edge * side
    if edge == 0:
        return r, 0.0, 0
    if edge == 1:
        return side, r, 1
    if edge == 2:
        return side - r, side, 2
    return 0.0, side - r, 3


def _entry_times(rng: random.Random, count: int) -> list[float]:
    return sorted(round(rng.uniform(0.0, ENTRY_WINDOW_S), 3) for _ in range(count))


def generate_synthetic_traffic(seed: int, count: int, grid: SectorGrid,
                               profile: str = "random") -> list[FlightPlan]:
    """Deterministic synthetic traffic.

    ``random``: entry and exit points uniform on two different edges of
    the region, constant altitude drawn from six flight levels (two per
    band), speed uniform in 420-480 kt.

    ``converging``: eight approach corridor fixes evenly spaced along the
    perimeter (rotated by a seeded offset). Each aircraft enters within
    0.5 NM of its corridor fix, descends from 9,000 to 3,000 ft and ends at a
    point drawn uniformly inside the 10 NM central disk (the airport),
    at 250-300 kt.

    Entry times are uniform over a 240 s window and sorted; ids follow
    entry order starting at 1.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = random.Random(f"traffic:{profile}:{seed}")
    side = grid.region_side
    times = _entry_times(rng, count)
    plans = []
    if profile == "random":
        for i, t0 in enumerate(times, start=1):
            while True:
                sx, sy, e0 = _perimeter_point(side, rng.uniform(0, 4 * side))
                e1 = (e0 + rng.randint(1, 3)) % 4
                ex, ey, _ = _perimeter_point(side, e1 * side + rng.uniform(0, side))
                if math.hypot(ex - sx, ey - sy) > 10.0:
                    break
            alt = rng.choice(RANDOM_LEVELS)
            speed = rng.uniform(*RANDOM_SPEED_KT)
            plans.append(straight_plan(i, (sx, sy, alt), (ex, ey, alt), t0, speed))
    elif profile == "converging":
        c = side / 2.0
        spacing = 4 * side / CONVERGING_CORRIDORS
        offset = rng.uniform(0, spacing)
        for i, t0 in enumerate(times, start=1):
            k = rng.randrange(CONVERGING_CORRIDORS)
            sx, sy, _ = _perimeter_point(side, offset + k * spacing + rng.uniform(-0.5, 0.5))
            r = CONVERGING_DISK_NM * 0.8 * math.sqrt(rng.random())
            th = rng.uniform(0, 2 * math.pi)
            tx, ty = c + r * math.cos(th), c + r * math.sin(th)
            speed = rng.uniform(*CONVERGING_SPEED_KT)
            plans.append(straight_plan(i, (sx, sy, 9_000.0), (tx, ty, 3_000.0), t0, speed))
    else:
        raise ValueError(f"unknown traffic profile {profile!r}")
    return plans


def snapshot_at(plans: Sequence[FlightPlan], t: float, region_side: float = REGION_SIDE_NM,
                day_of_week: int = 0, hour_of_day: int = 12,
                fuel: float = 120.0) -> TrafficSnapshot:
    """Instantaneous snapshot of all plans active at time ``t``."""
    states = []
    for p in plans:
        if not p.start_time <= t <= p.end_time:
            continue
        x, y, z = p.position(t)
        dt = 1.0
        x2, y2, _ = p.position(min(t + dt, p.end_time)) if t < p.end_time else (x, y, z)
        if (x2, y2) == (x, y):
            x0, y0, _ = p.position(t - dt)
            hd = math.degrees(math.atan2(x - x0, y - y0)) % 360.0
        else:
            hd = math.degrees(math.atan2(x2 - x, y2 - y)) % 360.0
        x = min(max(x, 0.0), region_side)
        y = min(max(y, 0.0), region_side)
        states.append(AircraftState(p.owner, x, y, max(z, 0.0), hd, p.ground_speed, fuel))
    return TrafficSnapshot(tuple(states), region_side, t, day_of_week, hour_of_day)
