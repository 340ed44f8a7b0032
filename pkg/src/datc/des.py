"""Deterministic discrete-event kernel.

Events are ordered by ``(time_ps, aircraft_id, event_type, seq)``; the
insertion sequence breaks ties between otherwise equal keys so the order
is total. Time is an integer number of picoseconds.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import io
import random
import time as _time
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Callable, NamedTuple, Optional

PS_PER_S = 10**12


def to_ps(seconds: float) -> int:
    return int(round(seconds * PS_PER_S))


def to_s(ps: int) -> float:
    return ps / PS_PER_S


class EventType(IntEnum):
    MESSAGE = 0
    TIMER = 1
    ENTRY_ATTEMPT = 2
    EXIT = 3
    FUEL_CHECK = 4


class EventKey(NamedTuple):
    time: int
    aircraft_id: int
    event_type: int


class OrderingError(RuntimeError):
    """An event was scheduled before the current clock."""


@dataclass
class DeliveryModel:
    latency: float = 0.05
    jitter: float = 0.0
    loss: float = 0.0
    reorder: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.latency < 0 or self.jitter < 0:
            raise ValueError("latency and jitter must be non-negative")
        if not 0.0 <= self.loss <= 1.0:
            raise ValueError("loss probability must be in [0, 1]")


class EventQueue:
    def __init__(self):
        self._heap: list = []
        self._seq = 0
        self.now = 0

    def __len__(self):
        return len(self._heap)

    def schedule(self, key: EventKey, payload: Any):
        if key.time < self.now:
            raise OrderingError(f"event at {key.time} ps scheduled before clock {self.now} ps")
        heapq.heappush(self._heap, (key.time, key.aircraft_id, int(key.event_type), self._seq,
                                    payload))
        self._seq += 1

    def peek_time(self) -> Optional[int]:
        return self._heap[0][0] if self._heap else None

    def pop(self) -> tuple[EventKey, int, Any]:
        t, aid, et, seq, payload = heapq.heappop(self._heap)
        self.now = t
        return EventKey(t, aid, et), seq, payload


@dataclass
class SimulationTrace:
    events: int = 0
    end_time_ps: int = 0
    timeout: bool = False
    quiescent: bool = True
    wall_time: float = 0.0
    log: list = field(default_factory=list)
    digest: str = ""

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time_ps", "aircraft", "type", "detail"])
        w.writerows(self.log)
        return buf.getvalue()


class Kernel:
    """Single-threaded event loop with a message network.

    Handlers are registered per aircraft id; a message to an unregistered
    id is counted as dead-lettered. Payloads are zero-argument callables.
    """

    def __init__(self, delivery: Optional[DeliveryModel] = None, record: bool = False):
        self.queue = EventQueue()
        self.delivery = delivery or DeliveryModel()
        self.rng = random.Random(f"net:{self.delivery.seed}")
        self.handlers: dict[int, Callable[[Any], None]] = {}
        self.record = record
        self.sent = 0
        self.delivered = 0
        self.dropped = 0
        self.dead_lettered = 0
        self.observers: list[Callable[[EventKey, int], None]] = []
        self._trace = SimulationTrace()
        self._hash = hashlib.sha256()

    @property
    def now(self) -> int:
        return self.queue.now

    @property
    def now_s(self) -> float:
        return to_s(self.queue.now)

    def register(self, aircraft_id: int, handler: Callable[[Any], None]):
        self.handlers[aircraft_id] = handler

    def unregister(self, aircraft_id: int):
        self.handlers.pop(aircraft_id, None)

    def schedule(self, key: EventKey, payload: Callable[[], Any], detail: str = ""):
        self.queue.schedule(key, (payload, detail))

    def at(self, t_s: float, aircraft_id: int, event_type: EventType,
           payload: Callable[[], Any], detail: str = ""):
        t = max(to_ps(t_s), self.now)
        self.schedule(EventKey(t, aircraft_id, event_type), payload, detail)

    def after(self, delay_s: float, aircraft_id: int, event_type: EventType,
              payload: Callable[[], Any], detail: str = ""):
        self.schedule(EventKey(self.now + to_ps(delay_s), aircraft_id, event_type),
                      payload, detail)

    def _latency_ps(self) -> int:
        d = self.delivery
        lat = d.latency
        if d.jitter > 0:
            lat += self.rng.uniform(0.0, d.jitter)
        if d.reorder:
            lat += self.rng.uniform(0.0, 2.0 * d.latency)
        return to_ps(lat)

    def send(self, src: int, dst: int, msg: Any, detail: str = ""):
        self.sent += 1
        handler = self.handlers.get(dst)
        if handler is None:
            self.dead_lettered += 1
            return
        if src != dst:
            if self.delivery.loss > 0 and self.rng.random() < self.delivery.loss:
                self.dropped += 1
                return
            delay = self._latency_ps()
        else:
            delay = 0

        def deliver():
            h = self.handlers.get(dst)
            if h is None:
                self.dead_lettered += 1
                return
            self.delivered += 1
            h(msg)

        self.schedule(EventKey(self.now + delay, dst, EventType.MESSAGE), deliver, detail)

    def run_until(self, time_limit: Optional[float] = None,
                  max_events: Optional[int] = None,
                  wall_limit: Optional[float] = None) -> SimulationTrace:
        """Process events in key order until quiescence or a limit.

        Hitting ``time_limit`` (simulated seconds), ``max_events`` or
        ``wall_limit`` (host seconds) with events still pending sets the
        trace's timeout flag.
        """
        tr = self._trace
        limit_ps = to_ps(time_limit) if time_limit is not None else None
        t_start = _time.perf_counter()
        while self.queue:
            nxt = self.queue.peek_time()
            if limit_ps is not None and nxt > limit_ps:
                tr.timeout = True
                break
            if max_events is not None and tr.events >= max_events:
                tr.timeout = True
                break
            if wall_limit is not None and (tr.events & 1023) == 0 and \
                    _time.perf_counter() - t_start > wall_limit:
                tr.timeout = True
                break
            key, seq, (payload, detail) = self.queue.pop()
            tr.events += 1
            for obs in self.observers:
                obs(key, seq)
            if self.record:
                row = (key.time, key.aircraft_id, EventType(key.event_type).name, detail)
                tr.log.append(row)
                self._hash.update(repr(row).encode())
            payload()
        tr.quiescent = not self.queue
        tr.end_time_ps = self.queue.now
        tr.wall_time += _time.perf_counter() - t_start
        tr.digest = self._hash.hexdigest()
        return tr
