"""Scenario runner: aircraft controllers on top of the protocol engines."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .airspace import FlightPlan, SectorGrid, SectorId, SectorVisit, sectors_crossed, straight_plan
from .conflict import (DEFAULT_MINIMA, DEFAULT_NMAC, CheckMeter, NmacThreshold,
                       SeparationMinima, assign_holding, backtrack_speeds, conflicts_with_any,
                       detect_conflict, scan_nmacs)
from .consensus import Attempt, Engine, Op, ProtocolParams, SectorState, TapRound
from .des import DeliveryModel, EventType, Kernel, SimulationTrace

DEFAULT_FUEL_MIN = 120.0


@dataclass
class SimConfig:
    grid: SectorGrid = field(default_factory=lambda: SectorGrid(2, 2))
    params: ProtocolParams = field(default_factory=ProtocolParams)
    delivery: DeliveryModel = field(default_factory=DeliveryModel)
    minima: SeparationMinima = DEFAULT_MINIMA
    nmac: NmacThreshold = DEFAULT_NMAC
    hold_quantum: float = 60.0
    max_holds: int = 10
    speed_bounds: tuple = (0.7, 1.3)
    alternate_step: float = 3.0
    check_cost: float = 1e-3
    tap_resends: int = 3
    fuel_reserve: float = 30.0
    fuel_check_interval: float = 60.0
    holding_burn: float = 1.5
    time_limit: Optional[float] = None
    time_slack: float = 1800.0
    max_events: Optional[int] = 5_000_000
    wall_limit: Optional[float] = None
    seed: int = 0
    record_trace: bool = False
    keep_history: bool = False
    admission_horizon: Optional[float] = 180.0


@dataclass
class RunMetrics:
    attempted: int = 0
    admitted: int = 0
    denied: int = 0
    diverted: int = 0
    holdings: int = 0
    speed_mods: int = 0
    alternates_used: int = 0
    retries: int = 0
    nmacs: int = 0
    late_commits: int = 0
    messages: int = 0
    events: int = 0
    phase1_time: float = 0.0
    phase2_time: float = 0.0
    wall_time: float = 0.0
    timeout: bool = False

    @property
    def r_success(self) -> float:
        return 1.0 if self.attempted == 0 else self.admitted / self.attempted

    @property
    def r_hold(self) -> float:
        return 0.0 if self.admitted == 0 else self.holdings / self.admitted

    @property
    def r_speed(self) -> float:
        return 0.0 if self.admitted == 0 else self.speed_mods / self.admitted

    @property
    def n_retry(self) -> float:
        return 0.0 if self.attempted == 0 else self.retries / self.attempted

    def check(self):
        counts = (self.attempted, self.admitted, self.denied, self.diverted, self.holdings,
                  self.speed_mods, self.retries, self.nmacs)
        if min(counts) < 0:
            raise AssertionError("negative count in metrics")
        if self.admitted + self.denied + self.diverted > self.attempted:
            raise AssertionError("admitted + denied + diverted exceeds attempted")


@dataclass
class Resolution:
    kind: str  # direct | speed | hold | alternate
    segment: FlightPlan
    rest: Optional[FlightPlan]
    hold_k: int = 0
    factor: float = 1.0
    alternate: float = 0.0
    via: str = "direct"
    announced: Optional[FlightPlan] = None


@dataclass
class RunResult:
    metrics: RunMetrics
    trace: SimulationTrace
    trajectories: dict
    nmac_reports: list
    violations: list
    message_counts: Counter
    outcomes: dict


class Flight:
    """Controller for one aircraft: sequences sector entries and exits."""

    def __init__(self, sim: "Simulation", plan: FlightPlan, fuel: float):
        self.sim = sim
        self.id = plan.owner
        self.nominal = plan
        self.remainder: Optional[FlightPlan] = plan
        self.fuel = fuel
        self.flown: list = []
        self.loiters: list = []
        self.status = "inbound"
        self.pending: Optional[SectorVisit] = None
        self.memberships: set = set()
        self.last_fuel_t: Optional[float] = None
        self.engine = Engine(self.id, sim)

    @property
    def now(self) -> float:
        return self.sim.kernel.now_s

    def start(self):
        self.schedule_next_entry()

    # -- entry -----------------------------------------------------------------

    def schedule_next_entry(self):
        rem = self.remainder
        route = sectors_crossed(self.sim.grid, rem) if rem is not None else []
        if not route:
            self.remainder = None
            if not self.memberships:
                self.status = "done"
            return
        visit = route[0]
        self.pending = visit
        when = max(self.now, visit.t_in - self.sim.params.start_ir_time)
        self.sim.kernel.at(when, self.id, EventType.ENTRY_ATTEMPT, self._begin_entry,
                           f"entry {visit.sector}")
        if self.last_fuel_t is None:
            self.last_fuel_t = when
            self.sim.kernel.at(when + self.sim.config.fuel_check_interval, self.id,
                               EventType.FUEL_CHECK, self._fuel_check, "fuel")

    def _begin_entry(self):
        if self.status not in ("inbound", "active") or self.pending is None:
            return
        self.sim.metrics.attempted += 1
        self.engine.start_entry(self.pending.sector, on_done=None)

    def build(self, sector: SectorId, others: list) -> tuple[Optional[Resolution], float]:
        visit = self.pending
        now = self.now
        margin = self.sim.commit_margin
        te = max(visit.t_in, now + margin)
        res, spent = self._resolve(visit, others, te)
        if res is not None and res.segment.start_time < now + spent + margin:
            res2, spent2 = self._resolve(visit, others, now + spent + margin)
            res, spent = res2, spent + spent2
        if res is not None:
            h = self.sim.config.admission_horizon
            seg = res.segment
            if h is not None and seg.end_time > seg.start_time + h:
                res.announced = seg.clip(seg.start_time, seg.start_time + h)
            else:
                res.announced = seg
        return res, spent

    def _candidate(self, rem: FlightPlan, t_in: float, t_out: float, te: float):
        seg = rem.clip(t_in, t_out).shifted(te - t_in)
        rest = rem.clip(t_out, rem.end_time) if rem.end_time > t_out + 1e-9 else None
        return seg, rest

    def _resolve(self, visit: SectorVisit, others: list, te: float):
        cfg = self.sim.config
        meter = CheckMeter(cfg.check_cost)
        spent = 0.0
        rem = self.remainder
        seg, rest = self._candidate(rem, visit.t_in, visit.t_out, te)
        if not others:
            res = Resolution("direct", seg, rest.shifted(te - visit.t_in) if rest else None)
        else:
            res = self._try_metered(seg, rest, visit.t_out, te - visit.t_in, others, meter)
            spent += self._last_speed_time
            if res is None:
                res = self._alternates(visit, others, te, meter)
                spent += self._last_speed_time
        return res, spent + meter.elapsed

    _last_speed_time = 0.0

    def _try_metered(self, seg, rest, t_out, shift, others, meter, allow_speed=True):
        cfg = self.sim.config
        p = self.sim.params
        self._last_speed_time = 0.0

        def rest_after(new_seg):
            if rest is None:
                return None
            return rest.shifted(shift + new_seg.end_time - (t_out + shift))

        if not conflicts_with_any(seg, others, cfg.minima, meter):
            return Resolution("direct", seg, rest_after(seg))
        if allow_speed:
            sm = CheckMeter(cfg.check_cost)
            sp = backtrack_speeds(seg, others, cfg.speed_bounds, p.solve_timeout, cfg.minima, sm)
            self._last_speed_time = min(sm.elapsed, p.solve_timeout)
            if sp is not None:
                return Resolution("speed", sp, rest_after(sp),
                                  factor=sp.ground_speed / seg.ground_speed)
        held = assign_holding(seg, others, cfg.hold_quantum, cfg.max_holds, cfg.minima, meter)
        if held is not None:
            hp, k = held
            return Resolution("hold", hp, rest_after(hp), hold_k=k)
        return None

    def _alternates(self, visit: SectorVisit, others: list, te: float, meter: CheckMeter):
        cfg = self.sim.config
        rem = self.remainder
        ex, ey, ez = rem.position(visit.t_in)
        dx, dy, dz = rem.waypoints[-1][:3]
        hx, hy = dx - ex, dy - ey
        norm = math.hypot(hx, hy)
        if norm == 0:
            return None
        nx, ny = -hy / norm, hx / norm
        side = self.sim.grid.region_side
        for k in range(1, self.sim.params.alternates + 1):
            for sign in (1, -1):
                off = sign * k * cfg.alternate_step
                tx = min(max(dx + off * nx, 0.0), side)
                ty = min(max(dy + off * ny, 0.0), side)
                if math.hypot(tx - ex, ty - ey) < 1e-6:
                    continue
                alt = straight_plan(self.id, (ex, ey, ez), (tx, ty, dz), visit.t_in,
                                    rem.ground_speed)
                route = sectors_crossed(self.sim.grid, alt)
                if not route or route[0].sector != visit.sector:
                    continue
                v = route[0]
                seg, rest = self._candidate(alt, v.t_in, v.t_out, te)
                res = self._try_metered(seg, rest, v.t_out, te - v.t_in, others, meter,
                                        allow_speed=False)
                if res is not None:
                    res.via, res.kind, res.alternate = res.kind, "alternate", off
                    return res
        return None

    def admitted(self, att: Attempt, op: Op):
        m = self.sim.metrics
        res: Resolution = att.resolution
        m.admitted += 1
        m.retries += att.retries
        m.phase1_time += self.now - att.started
        kind = res.via if res.kind == "alternate" else res.kind
        if res.kind == "alternate":
            m.alternates_used += 1
        if kind == "hold":
            m.holdings += 1
        elif kind == "speed":
            m.speed_mods += 1
        seg, rest = res.segment, res.rest
        if seg.start_time < self.now - 1e-9:
            dt = self.now - seg.start_time
            m.late_commits += 1
            seg = seg.shifted(dt)
            rest = rest.shifted(dt) if rest is not None else None
        self._append_flown(seg)
        self.status = "active"
        self.pending = None
        self.remainder = rest
        sector = att.sector
        self.memberships.add(sector)
        self.sim.kernel.at(seg.end_time, self.id, EventType.EXIT,
                           lambda: self._exit(sector), f"exit {sector}")
        self.schedule_next_entry()

    def _append_flown(self, seg: FlightPlan):
        wps = list(seg.waypoints)
        if self.flown:
            x, y, z, t = self.flown[-1]
            if wps[0][3] > t + 1e-9:
                self.flown.append((x, y, z, wps[0][3]))
                self.loiters.append((t, wps[0][3]))
            if wps[0][3] <= self.flown[-1][3] + 1e-9:
                wps = wps[1:]
        self.flown.extend(wps)

    def _exit(self, sector: SectorId):
        if sector not in self.memberships:
            return
        def done():
            self.memberships.discard(sector)
            if self.remainder is None and self.pending is None and not self.memberships \
                    and self.status == "active":
                self.status = "done"

        self.engine.start_exit(sector, done)

    # -- failure paths -----------------------------------------------------------

    def denied(self, att: Attempt, reason: str):
        m = self.sim.metrics
        m.denied += 1
        m.retries += att.retries
        m.phase1_time += self.now - att.started
        self._abandon("denied")

    def _abandon(self, status: str):
        self.status = status
        self.pending = None
        self.remainder = None
        now = self.now
        if self.flown:
            t_last = self.flown[-1][3]
            if now > t_last + 1e-9:
                x, y, z, _ = self.flown[-1]
                self.flown.append((x, y, z, now))
                self.loiters.append((t_last, now))
            elif now < t_last:
                kept = [w for w in self.flown if w[3] < now]
                fp = FlightPlan(self.id, tuple(self.flown), 1.0)
                x, y, z = fp.position(now)
                if kept:
                    self.flown = kept + [(x, y, z, now)]
                else:
                    self.flown = []
        for sector in sorted(self.memberships):
            self._exit(sector)

    def _fuel_check(self):
        if self.status not in ("inbound", "active"):
            return
        now = self.now
        t0 = self.last_fuel_t
        hold = 0.0
        for a, b in self.loiters:
            hold += max(0.0, min(b, now) - max(a, t0))
        if self.pending is not None and now > self.pending.t_in:
            hold += max(0.0, now - max(self.pending.t_in, t0))
        hold = min(hold, now - t0)
        burn = (now - t0 - hold) + hold * self.sim.config.holding_burn
        self.fuel -= burn / 60.0
        self.last_fuel_t = now
        if self.fuel < self.sim.config.fuel_reserve and self.pending is not None:
            att = self.engine.abort_entry(self.pending.sector)
            if att is not None:
                m = self.sim.metrics
                m.diverted += 1
                m.retries += att.retries
                m.phase1_time += now - att.started
                self._abandon("diverted")
                return
        self.sim.kernel.after(self.sim.config.fuel_check_interval, self.id,
                              EventType.FUEL_CHECK, self._fuel_check, "fuel")

    def trajectory(self) -> Optional[FlightPlan]:
        if len(self.flown) < 2:
            return None
        return FlightPlan(self.id, tuple(self.flown), self.nominal.ground_speed)


class Simulation:
    """One seeded run of the admission protocol over a set of flight plans."""

    def __init__(self, plans: Sequence[FlightPlan], config: Optional[SimConfig] = None,
                 fuel: Optional[dict] = None):
        self.config = config or SimConfig()
        self.grid = self.config.grid
        self.params = self.config.params
        ids = [p.owner for p in plans]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate aircraft ids in scenario")
        self.plans = sorted(plans, key=lambda p: p.owner)
        self.kernel = Kernel(self.config.delivery, record=self.config.record_trace)
        self.metrics = RunMetrics()
        self.registry: dict[SectorId, SectorState] = {}
        self.directory: dict[SectorId, frozenset] = {}
        self.decisions: dict[tuple, tuple] = {}
        self.quorums: dict[SectorId, list] = {}
        self.violations: list = []
        self.message_counts: Counter = Counter()
        self.orphans: list = []
        d = self.config.delivery
        self.max_latency = d.latency + d.jitter + (2 * d.latency if d.reorder else 0.0)
        self.commit_margin = self.params.timeout_duration + 4 * self.max_latency
        fuel = fuel or {}
        self.flights = {p.owner: Flight(self, p, fuel.get(p.owner, DEFAULT_FUEL_MIN))
                        for p in self.plans}

    # -- hooks used by the engines ---------------------------------------------

    def count_message(self, msg):
        self.message_counts[msg.kind.value] += 1

    def members(self, sector: SectorId) -> frozenset:
        return self.directory.get(sector, frozenset())

    def sector_snapshot(self, sector: SectorId) -> SectorState:
        return self.registry.get(sector, SectorState.empty())

    def claim_empty_sector(self, sector: SectorId, op: Op, version: int):
        snap = self.sector_snapshot(sector)
        if snap.version != version or self.members(sector):
            return None
        new = snap.apply(op, version + 1)
        self._audit_state(sector, new, op)
        self._record_decision(sector, new.version, op)
        self.registry[sector] = new
        self.directory[sector] = new.members
        return new

    def build_plan(self, aid: int, sector: SectorId, others: list):
        return self.flights[aid].build(sector, others)

    def plan_still_timely(self, plan: FlightPlan) -> bool:
        return plan.start_time >= self.kernel.now_s + 3 * self.max_latency

    def verify_cost(self, view: SectorState) -> float:
        return self.config.check_cost * len(view.admitted)

    def _record_decision(self, sector, instance, op):
        key = (sector, instance)
        prev = self.decisions.get(key)
        if prev is not None and prev != op.uid:
            self.violations.append(("agreement", sector, instance, prev, op.uid))
        self.decisions[key] = op.uid

    def _audit_state(self, sector, state: SectorState, op: Op):
        if op.kind != "add":
            return
        for aid, plan in state.admitted:
            if aid != op.aircraft and detect_conflict(op.plan, plan, self.config.minima):
                self.violations.append(("conflict", sector, state.version, op.aircraft, aid))

    def on_decided(self, att: Attempt, instance: int, op: Op, state: SectorState, accepts):
        sector = att.sector
        self._record_decision(sector, instance, op)
        self._audit_state(sector, state, op)
        self.quorums.setdefault(sector, []).append((instance, frozenset(att.targets), accepts))
        cur = self.registry.get(sector)
        if cur is None or state.version > cur.version:
            self.registry[sector] = state
            self.directory[sector] = state.members

    def on_tap_complete(self, aid: int, tap: TapRound):
        sector = tap.sector
        self.metrics.phase2_time += self.kernel.now_s - tap.started
        cur = self.registry.get(sector)
        if tap.excluded and cur is not None and cur.version == tap.instance:
            self.registry[sector] = cur.without_members(tap.excluded)
            self.directory[sector] = self.registry[sector].members
        digest = tap.state.digest()
        for m in sorted(tap.state.members - tap.excluded):
            v = self.flights[m].engine.views.get(sector) if m in self.flights else None
            if v is not None and v.version == tap.instance and v.digest() != digest:
                self.violations.append(("tap_digest", sector, tap.instance, m))

    def audit_apply(self, aid: int, sector: SectorId, state: SectorState):
        pass

    def on_entry_admitted(self, aid: int, att: Attempt, op: Op):
        self.flights[aid].admitted(att, op)

    def on_entry_denied(self, aid: int, att: Attempt, reason: str):
        self.flights[aid].denied(att, reason)

    def on_exit_done(self, aid: int, att: Attempt):
        self.metrics.phase2_time += self.kernel.now_s - att.started

    def note_orphan_admission(self, aid: int, sector: SectorId):
        self.orphans.append((aid, sector))

    # -- run -------------------------------------------------------------------

    def final_digest_audit(self) -> list:
        """Live members of each sector must agree on the admitted set."""
        bad = []
        for sector in sorted(self.directory):
            views = []
            for m in sorted(self.directory[sector]):
                v = self.flights[m].engine.views.get(sector)
                if v is not None:
                    views.append(v)
            if not views:
                continue
            top = max(v.version for v in views)
            digests = {v.digest() for v in views if v.version == top}
            if len(digests) > 1:
                bad.append(("final_digest", sector, top))
        return bad

    def run(self) -> RunResult:
        cfg = self.config
        for aid in sorted(self.flights):
            self.flights[aid].start()
        limit = cfg.time_limit
        if limit is None:
            end = max((p.end_time for p in self.plans), default=0.0)
            limit = end + cfg.time_slack
        trace = self.kernel.run_until(limit, cfg.max_events, cfg.wall_limit)
        self.violations.extend(self.final_digest_audit())
        trajs = {}
        for aid in sorted(self.flights):
            t = self.flights[aid].trajectory()
            if t is not None:
                trajs[aid] = t
        reports = scan_nmacs(list(trajs.values()), cfg.nmac)
        m = self.metrics
        m.nmacs = len(reports)
        m.timeout = trace.timeout
        m.wall_time = trace.wall_time
        m.events = trace.events
        m.messages = self.kernel.sent
        m.check()
        outcomes = {aid: f.status for aid, f in sorted(self.flights.items())}
        return RunResult(m, trace, trajs, reports, self.violations, self.message_counts,
                         outcomes)


def simulate(plans: Sequence[FlightPlan], config: Optional[SimConfig] = None,
             fuel: Optional[dict] = None) -> RunResult:
    return Simulation(plans, config, fuel).run()
