"""Per-aircraft admission engine: Discovery, Synod, TAP, exits and C3 aborts.

Each sector runs a sequence of single-decree Synod instances. Instance
``k`` decides one operation (add a plan or remove one) on top of the
replicated sector state at version ``k - 1``; acceptors are the sector
members at that version. After a decision, the coordinator disseminates
the new state in two rounds (LEARN/LEARNT, then AK/ACK) and members only
take part in instance ``k + 1`` once they have seen the AK for ``k``.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, Callable, Iterable, Optional

from .airspace import FlightPlan, SectorId
from .des import EventType

if TYPE_CHECKING:
    from .simulation import Simulation


@dataclass(frozen=True)
class ProtocolParams:
    timeout_duration: float = 1.0
    ir_attempts: int = 5
    alternates: int = 4
    phase_delay_factor: float = 2.0
    nack_backoff_min: float = 0.1
    nack_backoff_max: float = 2.0
    start_ir_time: float = 60.0
    solve_timeout: float = 5.0

    def __post_init__(self):
        if not self.nack_backoff_min < self.nack_backoff_max:
            raise ValueError("nack_backoff_min must be < nack_backoff_max")
        if self.ir_attempts < 1 or self.alternates < 1:
            raise ValueError("ir_attempts and alternates must be >= 1")
        for name in ("timeout_duration", "phase_delay_factor", "nack_backoff_min",
                     "start_ir_time", "solve_timeout"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.phase_delay_factor < 1:
            raise ValueError("phase_delay_factor must be >= 1")

    @classmethod
    def unchecked(cls, **kw) -> "ProtocolParams":
        """Build without validation (test scenarios such as zero backoff)."""
        obj = object.__new__(cls)
        for f in cls.__dataclass_fields__:
            object.__setattr__(obj, f, kw.get(f, cls.__dataclass_fields__[f].default))
        return obj

    def as_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


PARAM_NAMES = tuple(ProtocolParams.__dataclass_fields__)


@dataclass(frozen=True, order=True)
class ProposalNumber:
    round: int
    proposer: int


ZERO = ProposalNumber(0, -1)


def quorum(occupants: int) -> int:
    if occupants < 0:
        raise ValueError("occupant count must be non-negative")
    return 0 if occupants == 0 else occupants // 2 + 1


def nack_backoff(attempt: int, params: ProtocolParams, rng: random.Random) -> float:
    """Randomized exponential backoff.

    The window doubles with each attempt, ``[min * 2**a, min * 2**(a+1)]``,
    with both edges clamped to ``nack_backoff_max``.
    """
    if attempt < 0:
        raise ValueError("attempt must be >= 0")
    cap = params.nack_backoff_max
    lo = min(cap, params.nack_backoff_min * 2.0 ** min(attempt, 60))
    hi = min(cap, params.nack_backoff_min * 2.0 ** min(attempt + 1, 61))
    if hi <= lo:
        return lo
    return rng.uniform(lo, hi)


@dataclass(frozen=True)
class Op:
    """Value agreed by one Synod instance."""

    kind: str  # "add" | "remove"
    aircraft: int
    plan: Optional[FlightPlan] = None
    certificate: bool = False
    exit_flag: bool = False
    uid: tuple = (0, 0)


@dataclass(frozen=True)
class SectorState:
    version: int
    members: frozenset
    admitted: tuple  # sorted ((aircraft_id, FlightPlan), ...)

    @classmethod
    def empty(cls, version: int = 0) -> "SectorState":
        return cls(version, frozenset(), ())

    def plans(self) -> dict[int, FlightPlan]:
        return dict(self.admitted)

    def apply(self, op: Op, version: int) -> "SectorState":
        adm = dict(self.admitted)
        members = set(self.members)
        if op.kind == "add":
            adm[op.aircraft] = op.plan
            members.add(op.aircraft)
        elif op.kind == "remove":
            adm.pop(op.aircraft, None)
            members.discard(op.aircraft)
        else:
            raise ValueError(f"unknown op kind {op.kind!r}")
        return SectorState(version, frozenset(members), tuple(sorted(adm.items())))

    def without_members(self, ids) -> "SectorState":
        return SectorState(self.version, self.members - frozenset(ids), self.admitted)

    def digest(self) -> str:
        h = hashlib.sha256()
        for aid, plan in self.admitted:
            h.update(repr((aid, plan.waypoints, plan.ground_speed)).encode())
        return h.hexdigest()


class Kind(str, Enum):
    INIT_REQ = "INIT_REQ"
    REQ_ACK = "REQ_ACK"
    PREPARE = "PREPARE"
    PROMISE = "PROMISE"
    ACCEPT = "ACCEPT"
    ACCEPTED = "ACCEPTED"
    NACK = "NACK"
    LEARN = "LEARN"
    LEARNT = "LEARNT"
    AK = "AK"
    ACK = "ACK"
    C3_ABORT = "C3_ABORT"


_REQUIRED = {
    Kind.PREPARE: ("number",),
    Kind.PROMISE: ("number",),
    Kind.ACCEPT: ("number", "op"),
    Kind.ACCEPTED: ("number",),
    Kind.NACK: ("number",),
    Kind.LEARN: ("op", "state"),
}


@dataclass(frozen=True)
class Message:
    kind: Kind
    sender: int
    sector: SectorId
    msg_id: tuple
    instance: int = 0
    token: int = 0
    number: Optional[ProposalNumber] = None
    op: Optional[Op] = None
    state: Optional[SectorState] = None
    accepted: Optional[tuple] = None  # (ProposalNumber, Op) carried by PROMISE
    promised: Optional[ProposalNumber] = None
    ready: bool = False
    reason: str = ""
    excluded: frozenset = frozenset()

    def __post_init__(self):
        for f in _REQUIRED.get(self.kind, ()):
            if getattr(self, f) is None:
                raise ValueError(f"{self.kind.value} message requires {f}")


class InvariantViolation(AssertionError):
    pass


def acceptor_gate(version: Optional[int], ready: bool, promised: ProposalNumber,
                  instance: int, number: ProposalNumber) -> Optional[str]:
    """NACK reason for a PREPARE/ACCEPT, or ``None`` when the acceptor may answer.

    ``version`` is the acceptor's replicated-state version (``None`` when it
    holds no state for the sector). Only instance ``version + 1`` is open,
    and only once the previous instance's AK has arrived (``ready``).
    """
    if version is not None and instance <= version:
        return "stale"
    if version is None or instance > version + 1 or not ready:
        return "not_ready"
    if number < promised:
        return "promised"
    return None


def choose_value(carried: Iterable[Optional[tuple]], own):
    """Adoption rule: the highest-numbered previously accepted value wins."""
    seen = [c for c in carried if c is not None]
    if not seen:
        return own
    return max(seen, key=lambda c: c[0])[1]


@dataclass
class Attempt:
    kind: str  # "entry" | "exit"
    sector: SectorId
    started: float
    token: int = 0
    phase: str = "idle"
    retries: int = 0
    discovery_retries: int = 0
    synod_retries: int = 0
    backoff_attempt: int = 0
    discovery_rounds: int = 0
    targets: tuple = ()
    responses: dict = field(default_factory=dict)
    view: Optional[SectorState] = None
    number: Optional[ProposalNumber] = None
    max_round: int = 0
    promises: dict = field(default_factory=dict)
    accepts: set = field(default_factory=set)
    own_op: Optional[Op] = None
    proposing: Optional[Op] = None
    resolution: object = None
    on_done: Optional[Callable] = None


@dataclass
class TapRound:
    sector: SectorId
    instance: int
    op: Op
    state: SectorState
    started: float
    stage: str = "learn"
    pending: set = field(default_factory=set)
    resends: int = 0
    excluded: set = field(default_factory=set)
    learn_msgs: dict = field(default_factory=dict)
    ak_msgs: dict = field(default_factory=dict)
    token: int = 0
    then: Optional[Callable] = None


class Engine:
    """Protocol state of one aircraft across every sector it touches."""

    def __init__(self, aircraft_id: int, sim: "Simulation"):
        self.id = aircraft_id
        self.sim = sim
        self.kernel = sim.kernel
        self.params: ProtocolParams = sim.config.params
        self.rng = random.Random(f"backoff:{sim.config.seed}:{aircraft_id}")
        self.views: dict[SectorId, SectorState] = {}
        self.ready: dict[SectorId, bool] = {}
        self.promised: dict[SectorId, ProposalNumber] = {}
        self.accepted: dict[SectorId, tuple] = {}  # sector -> (instance, number, op)
        self.seen: set = set()
        self.tracking: dict[SectorId, set] = {}
        self.history: list = []
        self.promise_log: dict[SectorId, list] = {}
        self.attempts: dict[SectorId, Attempt] = {}
        self.taps: dict[tuple, TapRound] = {}
        self.abandoned: set = set()  # sectors this aircraft gave up entering (C3 / diversion)
        self._msg_seq = 0
        self._token = 0
        kernel = self.kernel
        kernel.register(aircraft_id, self.receive)

    # -- plumbing ------------------------------------------------------------

    def _next_token(self) -> int:
        self._token += 1
        return self._token

    def _send(self, dst: int, kind: Kind, sector: SectorId, msg_id=None, **fields) -> Message:
        if msg_id is None:
            self._msg_seq += 1
            msg_id = (self.id, self._msg_seq)
        msg = Message(kind, self.id, sector, msg_id, **fields)
        self._transmit(dst, msg)
        return msg

    def _transmit(self, dst: int, msg: Message):
        self.sim.count_message(msg)
        self.kernel.send(self.id, dst, msg, detail=f"{msg.kind.value} {msg.sender}->{dst} {msg.sector}")

    def _timer(self, delay: float, fn: Callable, detail: str = "timer"):
        self.kernel.after(delay, self.id, EventType.TIMER, fn, detail)

    @property
    def now(self) -> float:
        return self.kernel.now_s

    def receive(self, msg: Message):
        if self.sim.config.keep_history:
            self.history.append((self.kernel.now, msg.kind.value, msg.sender, msg.msg_id))
        handler = getattr(self, "_on_" + msg.kind.value.lower())
        handler(msg)

    # -- acceptor / member side ----------------------------------------------

    def _is_ready(self, sector: SectorId) -> bool:
        return sector in self.views and self.ready.get(sector, False)

    def _promise(self, sector: SectorId, number: ProposalNumber):
        cur = self.promised.get(sector, ZERO)
        if number < cur:
            raise InvariantViolation(f"engine {self.id}: promise would decrease")
        self.promised[sector] = number
        self.promise_log.setdefault(sector, []).append(number)

    def _on_init_req(self, msg: Message):
        self.tracking.setdefault(msg.sector, set()).add(msg.sender)
        self._send(msg.sender, Kind.REQ_ACK, msg.sector, token=msg.token,
                   state=self.views.get(msg.sector), ready=self._is_ready(msg.sector),
                   promised=self.promised.get(msg.sector, ZERO))

    def _nack(self, msg: Message, reason: str):
        view = self.views.get(msg.sector)
        self._send(msg.sender, Kind.NACK, msg.sector, token=msg.token, instance=msg.instance,
                   number=msg.number, reason=reason,
                   promised=self.promised.get(msg.sector, ZERO),
                   state=view if reason == "stale" else None)

    def _acceptor_gate(self, msg: Message) -> Optional[str]:
        view = self.views.get(msg.sector)
        return acceptor_gate(None if view is None else view.version,
                             self.ready.get(msg.sector, False),
                             self.promised.get(msg.sector, ZERO), msg.instance, msg.number)

    def _on_prepare(self, msg: Message):
        reason = self._acceptor_gate(msg)
        if reason:
            self._nack(msg, reason)
            return
        self._promise(msg.sector, msg.number)
        acc = self.accepted.get(msg.sector)
        carried = (acc[1], acc[2]) if acc and acc[0] == msg.instance else None
        self._send(msg.sender, Kind.PROMISE, msg.sector, token=msg.token, instance=msg.instance,
                   number=msg.number, accepted=carried)

    def _on_accept(self, msg: Message):
        reason = self._acceptor_gate(msg)
        if reason:
            self._nack(msg, reason)
            return
        self._promise(msg.sector, msg.number)
        prev = self.accepted.get(msg.sector)
        if prev and prev[0] == msg.instance and prev[1] > msg.number:
            raise InvariantViolation("accepted value replaced by a lower-numbered proposal")
        self.accepted[msg.sector] = (msg.instance, msg.number, msg.op)
        self._send(msg.sender, Kind.ACCEPTED, msg.sector, token=msg.token, instance=msg.instance,
                   number=msg.number)

    def _on_learn(self, msg: Message):
        sector = msg.sector
        first = msg.msg_id not in self.seen
        self.seen.add(msg.msg_id)
        view = self.views.get(sector)
        if first and (view is None or msg.instance > view.version):
            self._apply_state(sector, msg.state, msg.op)
        self._send(msg.sender, Kind.LEARNT, sector, token=msg.token, instance=msg.instance)

    def _apply_state(self, sector: SectorId, state: SectorState, op: Op):
        acc = self.accepted.get(sector)
        if acc and acc[0] <= state.version:
            del self.accepted[sector]
        if self.id in state.members or self.id in state.plans():
            self.views[sector] = state
            self.ready[sector] = False
        else:
            self._drop_sector(sector)
        self.sim.audit_apply(self.id, sector, state)
        if op.kind == "add" and op.aircraft == self.id:
            att = self.attempts.get(sector)
            if att and att.kind == "entry" and att.own_op is not None and att.own_op.uid == op.uid \
                    and att.phase != "done":
                # our value was driven to a decision by another proposer
                self._entry_admitted(att, op)
            elif sector in self.abandoned:
                self.sim.note_orphan_admission(self.id, sector)

    def _drop_sector(self, sector: SectorId):
        self.views.pop(sector, None)
        self.ready.pop(sector, None)
        self.accepted.pop(sector, None)

    def _on_ak(self, msg: Message):
        sector = msg.sector
        view = self.views.get(sector)
        if view is not None and view.version == msg.instance and msg.msg_id not in self.seen:
            self.views[sector] = view.without_members(msg.excluded)
            self.ready[sector] = True
        self.seen.add(msg.msg_id)
        self._send(msg.sender, Kind.ACK, sector, token=msg.token, instance=msg.instance)
        if sector in self.abandoned and view is not None and self.id in view.plans() \
                and sector not in self.attempts:
            # admitted after giving up: withdraw the orphan plan
            self.start_exit(sector)

    def _on_c3_abort(self, msg: Message):
        self.tracking.get(msg.sector, set()).discard(msg.sender)

    # -- proposer side: entry --------------------------------------------------

    def start_entry(self, sector: SectorId, on_done: Callable):
        """Phase A: discover occupants, then build a plan and run the Synod."""
        if sector in self.attempts:
            raise RuntimeError(f"aircraft {self.id} already negotiating {sector}")
        att = Attempt("entry", sector, started=self.now, on_done=on_done)
        self.attempts[sector] = att
        self._discover(att)

    def _discover(self, att: Attempt):
        att.token = self._next_token()
        att.phase = "discovery"
        att.discovery_rounds += 1
        att.responses = {}
        att.targets = tuple(sorted(self.sim.members(att.sector) - {self.id}))
        for dst in att.targets:
            self._send(dst, Kind.INIT_REQ, att.sector, token=att.token)
        tok = att.token
        self._timer(self.params.timeout_duration, lambda: self._discovery_done(att, tok),
                    "discovery-timeout")

    def _on_req_ack(self, msg: Message):
        att = self.attempts.get(msg.sector)
        if att is None or att.phase != "discovery" or msg.token != att.token:
            return
        att.responses[msg.sender] = msg
        if msg.promised is not None:
            att.max_round = max(att.max_round, msg.promised.round)

    def _discovery_done(self, att: Attempt, token: int):
        if att.token != token or att.phase != "discovery":
            return
        if not att.targets:
            if self.sim.members(att.sector) - {self.id}:
                self._retry(att, rediscover=True)
                return
            self._build(att, self.sim.sector_snapshot(att.sector), fast=True)
            return
        views = [m.state for m in att.responses.values() if m.state is not None]
        if len(views) >= quorum(len(att.targets)):
            view = max(views, key=lambda s: s.version)
            self._build(att, view, fast=False)
        else:
            self._retry(att, rediscover=True)

    def _build(self, att: Attempt, view: SectorState, fast: bool):
        att.view = view
        others = [p for aid, p in view.admitted if aid != self.id]
        res, compute = self.sim.build_plan(self.id, att.sector, others)
        att.phase = "build"
        if res is None:
            self._timer(compute, lambda: self._entry_failed(att, "no_plan"), "denied")
            return
        att.resolution = res
        att.own_op = Op("add", self.id, res.announced, certificate=res.kind == "direct",
                        uid=(self.id, self._next_token()))
        tok = att.token
        if fast:
            self._timer(compute, lambda: self._fast_admit(att, tok), "fast-path")
        else:
            self._timer(compute, lambda: self._prepare(att, tok), "build-done")

    def _fast_admit(self, att: Attempt, token: int):
        if att.token != token:
            return
        state = self.sim.claim_empty_sector(att.sector, att.own_op, att.view.version)
        if state is None:
            self._retry(att, rediscover=True)
            return
        self.views[att.sector] = state
        self.ready[att.sector] = True
        self._entry_admitted(att, att.own_op)

    # -- proposer side: shared Synod ------------------------------------------

    def _prepare(self, att: Attempt, token: int):
        if att.token != token:
            return
        att.token = self._next_token()
        att.targets = tuple(sorted(self.sim.members(att.sector)))
        if not att.targets:
            if att.kind == "exit":
                snap = self.sim.sector_snapshot(att.sector)
                if self.id in snap.plans():
                    self.sim.claim_empty_sector(att.sector, att.own_op, snap.version)
                self._finish_exit(att)
            else:
                self._retry(att, rediscover=True)
            return
        att.phase = "prepare"
        att.max_round += 1
        att.number = ProposalNumber(att.max_round, self.id)
        att.promises = {}
        att.accepts = set()
        inst = att.view.version + 1
        for dst in att.targets:
            self._send(dst, Kind.PREPARE, att.sector, token=att.token, instance=inst,
                       number=att.number)
        self._arm_synod_timer(att)

    def _arm_synod_timer(self, att: Attempt):
        tok = att.token
        phase = att.phase

        def expire():
            if att.token == tok and att.phase == phase:
                self._retry(att, rediscover=False)

        self._timer(self.params.timeout_duration, expire, "synod-timeout")

    def _on_promise(self, msg: Message):
        att = self.attempts.get(msg.sector)
        if att is None or att.phase != "prepare" or msg.token != att.token:
            return
        att.promises[msg.sender] = msg
        if len(att.promises) < quorum(len(att.targets)):
            return
        value = choose_value((m.accepted for m in att.promises.values()), att.own_op)
        if value is att.own_op and att.kind == "entry" and \
                not self.sim.plan_still_timely(value.plan):
            self._retry(att, rediscover=True)
            return
        att.proposing = value
        att.phase = "verify"
        tok = att.token
        delay = self.sim.verify_cost(att.view)
        self._timer(delay, lambda: self._accept(att, tok), "verify")

    def _accept(self, att: Attempt, token: int):
        if att.token != token or att.phase != "verify":
            return
        att.phase = "accept"
        for dst in att.targets:
            self._send(dst, Kind.ACCEPT, att.sector, token=att.token,
                       instance=att.view.version + 1, number=att.number, op=att.proposing)
        self._arm_synod_timer(att)

    def _on_accepted(self, msg: Message):
        att = self.attempts.get(msg.sector)
        if att is None or att.phase != "accept" or msg.token != att.token:
            return
        att.accepts.add(msg.sender)
        if len(att.accepts) >= quorum(len(att.targets)):
            self._decided(att)

    def _on_nack(self, msg: Message):
        att = self.attempts.get(msg.sector)
        if att is None or msg.token != att.token or att.phase not in ("prepare", "accept"):
            return
        if msg.promised is not None:
            att.max_round = max(att.max_round, msg.promised.round)
        if msg.reason == "stale":
            if att.kind == "exit" and msg.state is not None and \
                    msg.state.version > att.view.version:
                att.view = msg.state
                self.views[att.sector] = msg.state
                self.ready[att.sector] = True
                if self.id not in msg.state.plans():
                    self._finish_exit(att)
                    return
                att.own_op = replace(att.own_op)
            self._retry(att, rediscover=att.kind == "entry")
        else:
            self._retry(att, rediscover=False)

    def _retry(self, att: Attempt, rediscover: bool):
        att.token = self._next_token()
        att.retries += 1
        if rediscover and att.kind == "entry":
            att.discovery_retries += 1
            used = att.discovery_retries
        else:
            att.synod_retries += 1
            used = att.synod_retries
        if att.kind == "entry" and used > self.params.ir_attempts:
            self._entry_failed(att, "retries")
            return
        if not rediscover or att.kind == "exit":
            att.phase = "backoff"
            delay = nack_backoff(att.backoff_attempt, self.params, self.rng)
            att.backoff_attempt += 1
            tok = att.token
            if att.kind == "exit" and rediscover:
                self._timer(delay, lambda: self._refresh_exit(att, tok), "backoff")
            else:
                self._timer(delay, lambda: self._prepare(att, tok), "backoff")
        else:
            self._discover(att)

    def _decided(self, att: Attempt):
        att.phase = "done"
        inst = att.view.version + 1
        op = att.proposing
        new_state = att.view.apply(op, inst)
        self.sim.on_decided(att, inst, op, new_state, frozenset(att.accepts))
        own = op.uid == att.own_op.uid
        if att.kind == "entry":
            if own:
                self._entry_admitted(att, op)
                self._run_tap(att.sector, inst, op, new_state)
            else:
                self._run_tap(att.sector, inst, op, new_state,
                              then=lambda: self._restart_after_adoption(att))
        else:
            if own:
                self._run_tap(att.sector, inst, op, new_state, then=lambda: self._finish_exit(att))
            else:
                self._run_tap(att.sector, inst, op, new_state,
                              then=lambda: self._restart_after_adoption(att))

    def _restart_after_adoption(self, att: Attempt):
        if self.attempts.get(att.sector) is not att:
            return
        att.phase = "idle"
        if att.kind == "exit":
            att.view = self.views.get(att.sector, att.view)
            if self.id not in att.view.plans():
                self._finish_exit(att)
                return
            self._retry(att, rediscover=False)
        else:
            self._retry(att, rediscover=True)

    def _entry_admitted(self, att: Attempt, op: Op):
        att.phase = "done"
        att.token = self._next_token()
        self.attempts.pop(att.sector, None)
        self.sim.on_entry_admitted(self.id, att, op)

    def _entry_failed(self, att: Attempt, reason: str):
        att.phase = "done"
        att.token = self._next_token()
        self.attempts.pop(att.sector, None)
        self.emergency_exit(att.sector)
        self.sim.on_entry_denied(self.id, att, reason)

    def abort_entry(self, sector: SectorId) -> Optional[Attempt]:
        """Abandon a pending entry (fuel diversion)."""
        att = self.attempts.get(sector)
        if att is None or att.kind != "entry":
            return None
        att.phase = "done"
        att.token = self._next_token()
        self.attempts.pop(sector, None)
        self.emergency_exit(sector)
        return att

    def emergency_exit(self, sector: SectorId):
        """C3 exit: tell every occupant the entry is abandoned."""
        self.abandoned.add(sector)
        for dst in sorted(self.sim.members(sector) - {self.id}):
            self._send(dst, Kind.C3_ABORT, sector)

    # -- proposer side: exit ---------------------------------------------------

    def start_exit(self, sector: SectorId, on_done: Optional[Callable] = None):
        """Synod + TAP with the exit flag; no Discovery."""
        view = self.views.get(sector)
        if view is None or self.id not in view.plans():
            if on_done:
                on_done()
            return
        if sector in self.attempts:
            return
        att = Attempt("exit", sector, started=self.now, on_done=on_done, view=view)
        att.own_op = Op("remove", self.id, exit_flag=True, uid=(self.id, self._next_token()))
        att.max_round = self.promised.get(sector, ZERO).round
        self.attempts[sector] = att
        self._prepare(att, att.token)

    def _refresh_exit(self, att: Attempt, token: int):
        if att.token != token:
            return
        att.view = self.views.get(att.sector, att.view)
        self._prepare(att, token)

    def _finish_exit(self, att: Attempt):
        att.phase = "done"
        if self.attempts.get(att.sector) is att:
            self.attempts.pop(att.sector)
        self._drop_sector(att.sector)
        self.sim.on_exit_done(self.id, att)
        if att.on_done:
            att.on_done()

    # -- TAP coordinator -------------------------------------------------------

    def _run_tap(self, sector: SectorId, instance: int, op: Op, state: SectorState,
                 then: Optional[Callable] = None):
        tap = TapRound(sector, instance, op, state, started=self.now, then=then)
        self.taps[(sector, instance)] = tap
        targets = set(state.members) - {self.id}
        if op.kind == "remove":
            targets.discard(op.aircraft)
        if self.id in state.members or self.id in state.plans():
            self.views[sector] = state
            self.ready[sector] = False
        else:
            self._drop_sector(sector)
        self.sim.audit_apply(self.id, sector, state)
        tap.pending = set(targets)
        tap.token = self._next_token()
        for dst in sorted(targets):
            tap.learn_msgs[dst] = self._send(dst, Kind.LEARN, sector, token=tap.token,
                                             instance=instance, op=op, state=state)
        self._tap_advance(tap)

    def _tap_timer(self, tap: TapRound):
        tok = tap.token
        stage = tap.stage

        def expire():
            if tap.token != tok or tap.stage != stage:
                return
            tap.resends += 1
            if tap.resends > self.sim.config.tap_resends:
                tap.excluded |= tap.pending
                tap.pending = set()
                self._tap_advance(tap)
                return
            msgs = tap.learn_msgs if tap.stage == "learn" else tap.ak_msgs
            for dst in sorted(tap.pending):
                self._transmit(dst, msgs[dst])
            self._tap_timer(tap)

        delay = self.params.timeout_duration * self.params.phase_delay_factor
        self._timer(delay, expire, "tap-timeout")

    def _tap_advance(self, tap: TapRound):
        if tap.pending:
            self._tap_timer(tap)
            return
        if tap.stage == "learn":
            tap.stage = "ak"
            tap.resends = 0
            tap.token = self._next_token()
            recipients = set(tap.learn_msgs) - tap.excluded
            tap.pending = set(recipients)
            for dst in sorted(recipients):
                tap.ak_msgs[dst] = self._send(dst, Kind.AK, tap.sector, token=tap.token,
                                              instance=tap.instance,
                                              excluded=frozenset(tap.excluded))
            self._tap_advance(tap)
            return
        if tap.stage == "ak":
            tap.stage = "done"
            view = self.views.get(tap.sector)
            if view is not None and view.version == tap.instance:
                self.views[tap.sector] = view.without_members(tap.excluded)
                self.ready[tap.sector] = True
            self.taps.pop((tap.sector, tap.instance), None)
            self.sim.on_tap_complete(self.id, tap)
            if tap.then:
                tap.then()

    def _on_learnt(self, msg: Message):
        tap = self.taps.get((msg.sector, msg.instance))
        if tap is None or tap.stage != "learn" or msg.token != tap.token:
            return
        if msg.sender in tap.pending:
            tap.pending.discard(msg.sender)
            if not tap.pending:
                tap.token = self._next_token()
                self._tap_advance(tap)

    def _on_ack(self, msg: Message):
        tap = self.taps.get((msg.sector, msg.instance))
        if tap is None or tap.stage != "ak" or msg.token != tap.token:
            return
        if msg.sender in tap.pending:
            tap.pending.discard(msg.sender)
            if not tap.pending:
                tap.token = self._next_token()
                self._tap_advance(tap)
