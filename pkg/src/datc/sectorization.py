"""Traffic features and exhaustive R x C grid labeling."""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .airspace import (ALTITUDE_BANDS, FlightPlan, OutOfBoundsError, SectorGrid, TrafficSnapshot,
                       sector_of, sectors_crossed)
from .conflict import DEFAULT_MINIMA, SeparationMinima, detect_conflict, min_separation

DENSITY_RANGE = (0.0, 150.0)
PROXIMITY_RANGE = (0.0, 80.0)
ALT_MIX_RANGE = (0.0, 15_000.0)
RISK_RANGE = (0.0, 60.0)
FLOW_CONC_RANGE = (0.0, 1.5)
MAX_RC = 5

# hour -> time-of-day flag; night wraps midnight
TIME_BINS = (("morn", 6, 12), ("noon", 12, 18), ("eve", 18, 22))


@dataclass(frozen=True)
class FeatureVector:
    traffic_density: float
    avg_proximity: float
    altitude_mix: float
    conflict_risk: float
    primary_flow_dir: float
    flow_concentration: float
    time_of_day: float
    airspace_size: float
    congestion_index: float
    traffic_alt_complexity: float
    hotspot_indicator: float
    density_sq: float
    log_proximity: float
    traffic_level: int
    proximity_level: int
    risk_normalized: float
    flow_direction: float
    day_weekday: int
    day_weekend: int
    time_morn: int
    time_noon: int
    time_eve: int
    time_night: int

    @classmethod
    def names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_list(self) -> list:
        return list(astuple(self))


def _clamp(v: float, rng: tuple[float, float]) -> float:
    return min(max(v, rng[0]), rng[1])


def _tertile(v: float, rng: tuple[float, float]) -> int:
    lo, hi = rng
    edge = (hi - lo) / 3.0
    if v < lo + edge:
        return 0
    if v < lo + 2 * edge:
        return 1
    return 2


def _time_flag(hour: int) -> str:
    for name, lo, hi in TIME_BINS:
        if lo <= hour < hi:
            return name
    return "night"


def extract_features(snapshot: TrafficSnapshot) -> FeatureVector:
    ac = sorted(snapshot.aircraft, key=lambda a: a.id)
    n = len(ac)
    xy = np.array([(a.x, a.y) for a in ac], dtype=float).reshape(n, 2)
    if n >= 2:
        d = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(-1))
        iu = np.triu_indices(n, 1)
        prox = float(d[iu].mean())
        np.fill_diagonal(d, np.inf)
        risk = float(d.min(axis=1).mean())
    else:
        prox = risk = 0.0
    prox = _clamp(prox, PROXIMITY_RANGE)
    risk = _clamp(risk, RISK_RANGE)
    density = _clamp(float(n), DENSITY_RANGE)
    alt_mix = _clamp(float(np.std([a.altitude for a in ac])) if n else 0.0, ALT_MIX_RANGE)

    psi = np.radians([a.heading for a in ac])
    if n:
        flow_dir = float(np.abs(np.sin(psi)).mean())
        R = float(np.hypot(np.cos(psi).mean(), np.sin(psi).mean()))
        R = min(R, 1.0)
        conc = math.sqrt(max(0.0, -2.0 * math.log(R))) if R > 0 else math.inf
        conc = _clamp(conc, FLOW_CONC_RANGE)
        axial = float(np.hypot(np.cos(2 * psi).mean(), np.sin(2 * psi).mean()))
    else:
        flow_dir = conc = axial = 0.0

    hour = snapshot.hour_of_day
    tflag = _time_flag(hour)
    weekend = int(snapshot.day_of_week >= 5)
    return FeatureVector(
        traffic_density=density,
        avg_proximity=prox,
        altitude_mix=alt_mix,
        conflict_risk=risk,
        primary_flow_dir=min(flow_dir, 1.0),
        flow_concentration=conc,
        time_of_day=float(hour),
        airspace_size=float(snapshot.region_side),
        congestion_index=density / prox if prox > 0 else 0.0,
        traffic_alt_complexity=density * alt_mix,
        hotspot_indicator=risk / prox if prox > 0 else 0.0,
        density_sq=density ** 2,
        log_proximity=math.log1p(prox),
        traffic_level=_tertile(density, DENSITY_RANGE),
        proximity_level=_tertile(prox, PROXIMITY_RANGE),
        risk_normalized=risk / density if density > 0 else 0.0,
        flow_direction=min(axial, 1.0),
        day_weekday=1 - weekend,
        day_weekend=weekend,
        time_morn=int(tflag == "morn"),
        time_noon=int(tflag == "noon"),
        time_eve=int(tflag == "eve"),
        time_night=int(tflag == "night"),
    )


@dataclass(frozen=True)
class GridWeights:
    w_var: float = 1.0
    w_hand: float = 2.0
    w_risk: float = 10.0


@dataclass(frozen=True)
class GridObjectiveBreakdown:
    rows: int
    cols: int
    occupancy_variance: float
    handoff_count: int
    risk_pair_count: int
    weights: GridWeights

    @property
    def J(self) -> float:
        w = self.weights
        return (w.w_var * self.occupancy_variance + w.w_hand * self.handoff_count
                + w.w_risk * self.risk_pair_count)


def _grid(snapshot: TrafficSnapshot, rows: int, cols: int) -> SectorGrid:
    if not (1 <= rows <= MAX_RC and 1 <= cols <= MAX_RC):
        raise ValueError(f"grid {rows}x{cols} outside 1..{MAX_RC}")
    return SectorGrid(rows, cols, region_side=snapshot.region_side, layers=len(ALTITUDE_BANDS))


def _safe_sector(grid: SectorGrid, p):
    try:
        return sector_of(grid, *p)
    except OutOfBoundsError:
        return None


def risk_pairs(grid: SectorGrid, plans: Sequence[FlightPlan],
               minima: SeparationMinima = DEFAULT_MINIMA) -> int:
    """Conflicting pairs whose closest approach straddles a sector boundary."""
    count = 0
    for a, b in combinations(sorted(plans, key=lambda p: p.owner), 2):
        if detect_conflict(a, b, minima) is None:
            continue
        t = min_separation(a, b)[0]
        sa = _safe_sector(grid, a.position(t))
        sb = _safe_sector(grid, b.position(t))
        if sa is not None and sb is not None and sa != sb:
            count += 1
    return count


def score_grid(snapshot: TrafficSnapshot, plans: Sequence[FlightPlan], rows: int, cols: int,
               weights: GridWeights = GridWeights(),
               minima: SeparationMinima = DEFAULT_MINIMA) -> GridObjectiveBreakdown:
    grid = _grid(snapshot, rows, cols)
    counts = np.zeros(grid.n_sectors)
    for a in snapshot.aircraft:
        s = sector_of(grid, a.x, a.y, a.altitude)
        counts[(s.layer * rows + s.row) * cols + s.col] += 1
    var = float(counts.var())
    hand = sum(max(len(sectors_crossed(grid, p)) - 1, 0) for p in plans)
    risk = risk_pairs(grid, plans, minima)
    return GridObjectiveBreakdown(rows, cols, var, hand, risk, weights)


def score_all(snapshot: TrafficSnapshot, plans: Sequence[FlightPlan],
              weights: GridWeights = GridWeights(),
              minima: SeparationMinima = DEFAULT_MINIMA) -> list[GridObjectiveBreakdown]:
    """All 25 configurations, row-major over (R, C)."""
    return [score_grid(snapshot, plans, r, c, weights, minima)
            for r in range(1, MAX_RC + 1) for c in range(1, MAX_RC + 1)]


def label_optimal_grid(snapshot: TrafficSnapshot, plans: Sequence[FlightPlan],
                       weights: GridWeights = GridWeights(),
                       scores: Optional[list[GridObjectiveBreakdown]] = None) -> tuple[int, int]:
    """argmin J; ties go to the fewest sectors, then the fewest rows."""
    if scores is None:
        scores = score_all(snapshot, plans, weights)
    best = min(scores, key=lambda s: (s.J, s.rows * s.cols, s.rows))
    return best.rows, best.cols
