"""Experiment plumbing: config files, single runs, sweeps and the tuning objective."""

from __future__ import annotations

import configparser
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

from .airspace import FlightPlan, SectorGrid, generate_synthetic_traffic
from .bo import TrialOutcome
from .consensus import ProtocolParams
from .des import DeliveryModel
from .io import read_plans
from .sectorization import GridWeights
from .simulation import RunMetrics, RunResult, SimConfig, simulate


class ConfigError(ValueError):
    pass


METRIC_FIELDS = ["attempted", "admitted", "denied", "diverted", "holdings", "speed_mods",
                 "alternates_used", "retries", "nmacs", "late_commits", "messages", "events",
                 "phase1_time", "phase2_time", "timeout", "r_success", "r_hold", "r_speed",
                 "n_retry"]
SWEEP_KEYS = ["grid", "count", "rep", "profile", "traffic_seed"]


def parse_grid(text: str) -> SectorGrid:
    try:
        r, c = (int(v) for v in text.lower().split("x"))
        return SectorGrid(r, c)
    except ValueError as e:
        raise ConfigError(f"bad grid {text!r}; expected RxC") from e


def grid_label(g: SectorGrid) -> str:
    return f"{g.rows}x{g.cols}"


def metrics_row(m: RunMetrics, wall: bool = False) -> dict:
    row = {k: getattr(m, k) for k in METRIC_FIELDS}
    if wall:
        row["wall_time"] = m.wall_time
    return row


# -- config files ----------------------------------------------------------------

def _coerce(kind, text: str):
    if kind is bool:
        return text.strip().lower() in ("1", "true", "yes", "on")
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def _section_to(cls, section: Optional[configparser.SectionProxy], base=None):
    base = base if base is not None else cls()
    if section is None:
        return base
    kinds = {f.name: type(getattr(base, f.name)) for f in fields(cls)}
    kw = {}
    for k, v in section.items():
        if k not in kinds:
            raise ConfigError(f"unknown key {k!r} in [{section.name}]")
        kind = kinds[k]
        if kind is type(None):
            kind = float
        try:
            kw[k] = _coerce(kind, v)
        except ValueError as e:
            raise ConfigError(f"[{section.name}] {k}: {e}") from e
    try:
        return replace(base, **kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{section.name}]: {e}") from e


@dataclass
class RunConfig:
    """Everything a command needs, as read from an ini-style file."""

    params: ProtocolParams = field(default_factory=ProtocolParams)
    delivery: DeliveryModel = field(default_factory=DeliveryModel)
    weights: GridWeights = field(default_factory=GridWeights)
    sim: dict = field(default_factory=dict)
    scenario: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    campaign: dict = field(default_factory=dict)


_SIM_KEYS = {"hold_quantum": float, "max_holds": int, "alternate_step": float,
             "check_cost": float, "tap_resends": int, "fuel_reserve": float,
             "fuel_check_interval": float, "holding_burn": float, "time_limit": float,
             "time_slack": float, "max_events": int, "wall_limit": float,
             "admission_horizon": float}


def load_config(path: Optional[str]) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    known = {"params", "delivery", "weights", "sim", "scenario", "sweep", "campaign"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")
    cfg.params = _section_to(ProtocolParams, cp["params"] if cp.has_section("params") else None)
    cfg.delivery = _section_to(DeliveryModel,
                               cp["delivery"] if cp.has_section("delivery") else None)
    cfg.weights = _section_to(GridWeights, cp["weights"] if cp.has_section("weights") else None)
    if cp.has_section("sim"):
        for k, v in cp["sim"].items():
            if k not in _SIM_KEYS:
                raise ConfigError(f"unknown key {k!r} in [sim]")
            try:
                cfg.sim[k] = None if v.strip().lower() == "none" else _SIM_KEYS[k](v)
            except ValueError as e:
                raise ConfigError(f"[sim] {k}: {e}") from e
    for name in ("scenario", "sweep", "campaign"):
        if cp.has_section(name):
            setattr(cfg, name, dict(cp[name].items()))
    return cfg


def sim_config(rc: RunConfig, grid: SectorGrid, seed: int, **over) -> SimConfig:
    delivery = replace(rc.delivery, seed=seed if rc.delivery.seed == 0 else rc.delivery.seed)
    kw = dict(rc.sim)
    kw.update(over)
    return SimConfig(grid=grid, params=rc.params, delivery=delivery, seed=seed, **kw)


# -- scenarios ---------------------------------------------------------------------

@dataclass(frozen=True)
class TrafficSource:
    profile: str = "random"
    count: int = 10
    seed: int = 0
    plan_file: Optional[str] = None

    def load(self, grid: SectorGrid) -> tuple[list[FlightPlan], dict]:
        if self.plan_file:
            try:
                return read_plans(self.plan_file)
            except OSError as e:
                raise ConfigError(f"cannot read plan file: {e}") from e
        if self.profile not in ("random", "converging"):
            raise ConfigError(f"unknown traffic profile {self.profile!r}")
        if self.count < 0:
            raise ConfigError("count must be >= 0")
        return generate_synthetic_traffic(self.seed, self.count, grid, self.profile), {}


def run_one(source: TrafficSource, grid: SectorGrid, rc: RunConfig, seed: int,
            **over) -> RunResult:
    plans, fuel = source.load(grid)
    return simulate(plans, sim_config(rc, grid, seed, **over), fuel)


# -- sweeps ------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    grids: tuple
    counts: tuple
    profile: str = "random"
    seed: int = 0
    repetitions: int = 1
    plan_file: Optional[str] = None

    def __post_init__(self):
        if not self.grids or not self.counts:
            raise ConfigError("sweep needs at least one grid and one count")
        if min(self.counts) < 1:
            raise ConfigError("sweep counts must be >= 1")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")

    def cells(self) -> list[tuple[str, int, int]]:
        return [(g, n, r) for g in self.grids for n in self.counts
                for r in range(self.repetitions)]


def _cell(args) -> dict:
    spec, rc, g, n, rep, wall = args
    grid = parse_grid(g)
    tseed = spec.seed + rep
    src = TrafficSource(spec.profile, n, tseed, spec.plan_file)
    plans, fuel = src.load(grid)
    if spec.plan_file:
        plans = plans[:n]
    res = simulate(plans, sim_config(rc, grid, tseed), fuel)
    row = {"grid": g, "count": n, "rep": rep, "profile": spec.profile, "traffic_seed": tseed}
    row.update(metrics_row(res.metrics, wall))
    row["violations"] = len(res.violations)
    return row


def run_sweep(spec: SweepSpec, rc: Optional[RunConfig] = None, workers: int = 1,
              wall: bool = False) -> list[dict]:
    """One row per (grid, count, repetition), in that order regardless of ``workers``."""
    rc = rc or RunConfig()
    jobs = [(spec, rc, g, n, r, wall) for g, n, r in spec.cells()]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(_cell, jobs))
    return [_cell(j) for j in jobs]


def figure_tables(rows: Sequence[dict]) -> dict[str, tuple[list, list]]:
    """Per-figure aggregates (header, rows) derived from sweep rows."""
    grids = list(dict.fromkeys(r["grid"] for r in rows))
    counts = sorted({r["count"] for r in rows})

    def cell(g, n):
        return [r for r in rows if r["grid"] == g and r["count"] == n]

    conflict, nmac, phase = [], [], []
    for g in grids:
        for n in counts:
            rs = cell(g, n)
            if not rs:
                continue
            conflict.append([g, n, sum(r["holdings"] for r in rs),
                             sum(r["speed_mods"] for r in rs), sum(r["denied"] for r in rs)])
            nmac.append([g, n, sum(r["nmacs"] for r in rs)])
            phase.append([g, n, statistics.fmean(r["phase1_time"] for r in rs),
                          statistics.fmean(r["phase2_time"] for r in rs)])
    key = "wall_time" if rows and "wall_time" in rows[0] else "phase2_time"
    spread = []
    for n in counts:
        vals = [statistics.fmean(r[key] for r in cell(g, n)) for g in grids if cell(g, n)]
        spread.append([n, min(vals), max(vals), statistics.median(vals)])
    return {
        "conflicts": (["grid", "count", "holdings", "speed_mods", "denied"], conflict),
        "nmacs": (["grid", "count", "nmacs"], nmac),
        "time_range": (["count", f"min_{key}", f"max_{key}", f"median_{key}"], spread),
        "phases": (["grid", "count", "phase1_time", "phase2_time"], phase),
    }


# -- tuning objective --------------------------------------------------------------

class SimulationObjective:
    """Score a parameter vector by running one full simulation."""

    def __init__(self, plans: Sequence[FlightPlan], grid: SectorGrid,
                 rc: Optional[RunConfig] = None, fuel: Optional[dict] = None):
        self.plans = list(plans)
        self.grid = grid
        self.rc = rc or RunConfig()
        self.fuel = fuel

    def __call__(self, raw: dict, sim_seed: int) -> TrialOutcome:
        params = ProtocolParams(**raw)
        rc = replace(self.rc, params=params)
        res = simulate(self.plans, sim_config(rc, self.grid, sim_seed), self.fuel)
        m = res.metrics
        return TrialOutcome(m.r_success, m.r_hold, m.r_speed, m.n_retry,
                            nmac=m.nmacs > 0, timeout=m.timeout)
