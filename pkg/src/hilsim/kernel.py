"""Discrete-event kernel whose scheduler merges internal and external events.

External events are frames the emulation world reports through EmuCI. The
kernel keeps the world in lockstep: before executing anything at time t it
has the world advanced to t, and it asks the world to stop early whenever a
frame for one of its nodes shows up, so the simulation never falls behind
the emulation either.
"""

from __future__ import annotations

import collections
import enum
import heapq
import itertools
import logging
import time
from dataclasses import dataclass
from typing import Any, Callable

from . import mac, pcap
from .client import EmuciClient, NackError
from .emuci import NackCode

log = logging.getLogger(__name__)


class TimeInPast(ValueError):
    pass


class EventKind(enum.Enum):
    TIMER_FIRED = "timer"
    FRAME_ARRIVAL = "frameArrival"
    PRIMITIVE_DELIVERY = "primitive"
    CONTROL_ACTION = "control"


class Origin(enum.Enum):
    INTERNAL = "internal"
    EXTERNAL = "external"


# lower value runs first at equal timestamps
DEFAULT_PRIORITY = {
    EventKind.FRAME_ARRIVAL: 0,
    EventKind.PRIMITIVE_DELIVERY: 1,
    EventKind.TIMER_FIRED: 2,
    EventKind.CONTROL_ACTION: 3,
}


@dataclass(eq=False)
class Event:
    time: int
    kind: EventKind
    handler: Callable[[Event], Any] | None = None
    data: Any = None
    priority: int = 0
    origin: Origin = Origin.INTERNAL
    insertion_seq: int = 0
    live: bool = True

    def sort_key(self) -> tuple[int, int, int]:
        return (self.time, self.priority, self.insertion_seq)


class ClockMode(enum.Enum):
    AS_FAST_AS_POSSIBLE = "lockstep"
    REAL_TIME_PACED = "realtime"


@dataclass
class SimClock:
    now: int = 0
    mode: ClockMode = ClockMode.AS_FAST_AS_POSSIBLE
    tolerance_us: int = 10_000


@dataclass
class RealtimeReport:
    max_lag_us: int = 0
    overrun_count: int = 0
    steps: int = 0
    executed: int = 0


class Simulator:
    def __init__(self, clock: SimClock | None = None):
        self.clock = clock or SimClock()
        self._queue: list = []
        self._counter = itertools.count()
        self.executed = 0
        self.causality_violations = 0
        self.trace: list[tuple] = []
        self.modules: dict[int, ExternalInterfaceModule] = {}
        self.unrouted_frames = 0

    @property
    def now(self) -> int:
        return self.clock.now

    # --- queue ---------------------------------------------------------------

    def schedule(self, t_us: int, kind: EventKind = EventKind.TIMER_FIRED, handler=None,
                 data=None, priority: int | None = None,
                 origin: Origin = Origin.INTERNAL) -> Event:
        if t_us < self.clock.now:
            raise TimeInPast(f"event at {t_us} us is before now ({self.clock.now} us)")
        ev = Event(t_us, kind, handler, data,
                   DEFAULT_PRIORITY[kind] if priority is None else priority,
                   origin, next(self._counter))
        heapq.heappush(self._queue, (ev.sort_key(), ev))
        return ev

    def schedule_in(self, delay_us: int, *args, **kwargs) -> Event:
        return self.schedule(self.clock.now + delay_us, *args, **kwargs)

    def cancel(self, ev: Event) -> bool:
        """Cancel ``ev``; returns whether it was still pending."""
        was_live = ev.live
        ev.live = False
        return was_live

    def peek_time(self) -> int | None:
        while self._queue and not self._queue[0][1].live:
            heapq.heappop(self._queue)
        return self._queue[0][1].time if self._queue else None

    def _execute_through(self, t_us: int) -> int:
        n = 0
        while True:
            nxt = self.peek_time()
            if nxt is None or nxt > t_us:
                break
            _, ev = heapq.heappop(self._queue)
            ev.live = False
            self.clock.now = ev.time
            self.trace.append(_trace_entry(ev))
            if ev.handler is not None:
                ev.handler(ev)
            n += 1
        self.executed += n
        return n

    def run(self, until_us: int) -> int:
        """Pure simulation run, no emulation attached."""
        n = self._execute_through(until_us)
        self.clock.now = max(self.clock.now, until_us)
        return n

    # --- external side -------------------------------------------------------

    def attach(self, module: ExternalInterfaceModule) -> None:
        self.modules[module.node_id] = module

    def _drain_inbox(self, client: EmuciClient) -> None:
        while client.inbox:
            node_id, rec = client.inbox.popleft()
            t = rec.time_us
            if t < self.clock.now:
                self.causality_violations += 1
                log.warning("indication at %d us precedes sim time %d us; clamped",
                            t, self.clock.now)
                t = self.clock.now
            module = self.modules.get(node_id)
            if module is None:
                self.unrouted_frames += 1
                continue
            self.schedule(t, EventKind.FRAME_ARRIVAL, module.ext_receive,
                          (node_id, rec), origin=Origin.EXTERNAL)

    def _lockstep_step(self, until_us: int, client: EmuciClient) -> tuple[int, int]:
        nxt = self.peek_time()
        target = until_us if nxt is None else min(nxt, until_us)
        reached = client.advance_time(target, stop_on_indication=True)
        self._drain_inbox(client)
        n = self._execute_through(reached)
        self.clock.now = max(self.clock.now, reached)
        return reached, n

    def _lockstep_done(self, reached: int, until_us: int) -> bool:
        if reached < until_us:
            return False
        nxt = self.peek_time()
        return nxt is None or nxt > until_us

    def run_lockstep(self, until_us: int, client: EmuciClient) -> int:
        """Run simulation and emulation together up to ``until_us``.

        Returns the number of events executed.
        """
        total = 0
        while True:
            reached, n = self._lockstep_step(until_us, client)
            total += n
            if self._lockstep_done(reached, until_us):
                return total

    def run_realtime(self, until_us: int, client: EmuciClient) -> RealtimeReport:
        """Like :meth:`run_lockstep`, each step held back until wall time catches up."""
        report = RealtimeReport()
        tol = self.clock.tolerance_us
        t0_wall = time.monotonic()
        t0_sim = self.clock.now
        # bounded steps keep lag from early-stopped advances within tolerance
        max_step = max(tol // 2, 1000)
        while True:
            nxt = self.peek_time()
            target = until_us if nxt is None else min(nxt, until_us)
            target = min(target, self.clock.now + max_step)
            wait = (target - t0_sim) / 1e6 - (time.monotonic() - t0_wall)
            if wait > 0:
                time.sleep(wait)
            reached, n = self._lockstep_step(target, client)
            lag = int(((time.monotonic() - t0_wall) * 1e6) - (reached - t0_sim))
            report.max_lag_us = max(report.max_lag_us, lag)
            if lag > tol:
                report.overrun_count += 1
            report.steps += 1
            report.executed += n
            if self._lockstep_done(reached, until_us):
                return report


def _trace_entry(ev: Event) -> tuple:
    detail: Any = None
    data = ev.data
    if isinstance(data, tuple) and len(data) == 2 and isinstance(data[1], pcap.PcapRecord):
        detail = (data[0], data[1].data)
    elif isinstance(data, (mac.McpsDataConfirm, mac.McpsDataIndication)):
        detail = data
    elif isinstance(data, (bytes, int, str)):
        detail = data
    return (ev.time, ev.kind.value, ev.origin.value, detail)


# --- external interface module ---------------------------------------------------

_NACK_STATUS = {
    NackCode.UNKNOWN_NODE: mac.MacStatus.INVALID_PARAMETER,
    NackCode.OVERLOAD: mac.MacStatus.TRANSACTION_OVERFLOW,
    NackCode.INVALID_PARAMETER: mac.MacStatus.INVALID_PARAMETER,
    NackCode.MALFORMED_PAYLOAD: mac.MacStatus.INVALID_PARAMETER,
}


@dataclass
class ModuleCounters:
    sent: int = 0
    confirmed: int = 0
    delivered: int = 0
    own_tx_seen: int = 0
    drop_fcs: int = 0
    drop_non_data: int = 0
    drop_malformed: int = 0
    drop_not_for_us: int = 0


class ExternalInterfaceModule:
    """Simulated 802.15.4 interface whose radio lives in the emulation world.

    Outbound MCPS-DATA requests are serialized to real MPDUs and injected
    at the bound backend node; frames captured at that node come back as
    indications. ``app`` receives ``on_confirm`` / ``on_indication`` calls.
    """

    def __init__(self, sim: Simulator, client: EmuciClient, node_id: int,
                 short_addr: int | None = None, pan_id: int = 0x0022, app=None,
                 recorder: pcap.PcapWriter | None = None, default_lqi: int = 255):
        self.sim = sim
        self.client = client
        self.node_id = node_id
        self.address = mac.MacAddress.short(node_id if short_addr is None else short_addr)
        self.pan_id = pan_id
        self.app = app
        self.recorder = recorder
        self.default_lqi = default_lqi
        self.seq = 0
        self.counters = ModuleCounters()
        self._in_flight: collections.deque[bytes] = collections.deque()
        sim.attach(self)

    def _confirm(self, handle: int, status: mac.MacStatus, t_us: int) -> Event:
        conf = mac.McpsDataConfirm(handle, status, t_us)
        return self.sim.schedule(t_us, EventKind.PRIMITIVE_DELIVERY, self._deliver_confirm, conf)

    def _deliver_confirm(self, ev: Event) -> None:
        self.counters.confirmed += 1
        if self.app is not None and hasattr(self.app, "on_confirm"):
            self.app.on_confirm(ev.data)

    def ext_send(self, req: mac.McpsDataRequest) -> Event:
        """Send ``req``; returns the future McpsDataConfirm event."""
        now = self.sim.now
        try:
            frame = mac.build_data_mpdu(req, self.seq, self.pan_id, self.address)
            mpdu = mac.encode_frame(frame)
        except mac.FrameTooLong:
            return self._confirm(req.msdu_handle, mac.MacStatus.FRAME_TOO_LONG, now)
        except mac.CodecError:
            return self._confirm(req.msdu_handle, mac.MacStatus.INVALID_PARAMETER, now)
        try:
            self.client.inject_frame(self.node_id, pcap.encode_record(now, mpdu))
        except NackError as e:
            status = _NACK_STATUS.get(e.code, mac.MacStatus.CHANNEL_ACCESS_FAILURE)
            return self._confirm(req.msdu_handle, status, now)
        self.seq = (self.seq + 1) & 0xFF
        self.counters.sent += 1
        self._in_flight.append(mpdu)
        if self.recorder is not None:
            self.recorder.append(now, mpdu)
        return self._confirm(req.msdu_handle, mac.MacStatus.SUCCESS, now + mac.airtime(len(mpdu)))

    def inject_raw(self, mpdu: bytes) -> None:
        """Inject bytes verbatim, e.g. a deliberately corrupt frame."""
        self.client.inject_frame(self.node_id, pcap.encode_record(self.sim.now, mpdu))
        self._in_flight.append(bytes(mpdu))
        if self.recorder is not None:
            self.recorder.append(self.sim.now, mpdu)

    def ext_receive(self, ev: Event) -> None:
        _, rec = ev.data
        data = rec.data
        if self._in_flight and data == self._in_flight[0]:
            # the backend's capture of our own transmission
            self._in_flight.popleft()
            self.counters.own_tx_seen += 1
            return
        if self.recorder is not None:
            self.recorder.append(ev.time, data)
        try:
            frame = mac.decode_frame(data)
        except mac.FcsMismatch:
            self.counters.drop_fcs += 1
            return
        except mac.CodecError:
            self.counters.drop_malformed += 1
            return
        if frame.fcf.frame_type != mac.FrameType.DATA:
            self.counters.drop_non_data += 1
            return
        if frame.dest.mode == mac.AddrMode.SHORT and frame.dest.value not in (
                self.address.value, mac.BROADCAST_ADDR):
            self.counters.drop_not_for_us += 1
            return
        ind = mac.frame_to_indication(frame, self.default_lqi, ev.time)
        self.counters.delivered += 1
        if self.app is not None and hasattr(self.app, "on_indication"):
            self.app.on_indication(ind)
