"""Virtual emulation backend: a farm of nodes on a step-attenuated channel.

Each node is a radio bridged to the host over a SLIP serial line. Frames
the host writes to the line are transmitted; frames the radio receives are
written back up the line, where the node's behavior (sink, echo or a fixed
script) consumes them.

All power arithmetic is done in integer quarter-dB so attenuation
thresholds are exact.
"""

from __future__ import annotations

import bisect
import enum
import heapq
import itertools
import logging
from dataclasses import dataclass, field, replace

from . import mac
from .slip import SlipDecoder, slip_encode

log = logging.getLogger(__name__)

ISOLATION = 0xFFFF
DEFAULT_QUARTER_DB = 160  # 40 dB


class WorldError(Exception):
    pass


class UnknownNode(WorldError):
    pass


class DuplicateNode(WorldError):
    pass


class SelfLink(WorldError):
    pass


class TimeInPast(WorldError):
    pass


class Overload(WorldError):
    pass


class InvalidFrame(WorldError):
    pass


class Behavior(enum.Enum):
    SINK = "sink"
    ECHO = "echo"
    SCRIPTED = "scripted"


class Outcome(enum.Enum):
    DELIVERED = "delivered"
    BELOW_SENSITIVITY = "belowSensitivity"
    JAMMED = "jammed"
    ISOLATED = "isolated"


class JamMode(enum.Enum):
    DROP = "drop"
    CORRUPT = "corrupt"


@dataclass(frozen=True)
class NodeConfig:
    node_id: int
    short_addr: int | None = None
    pan_id: int = 0x0022
    tx_power_dbm: int = 0
    sensitivity_dbm: int = -85
    behavior: Behavior = Behavior.SINK
    turnaround_us: int = 0
    script: tuple[tuple[int, bytes], ...] = ()

    def __post_init__(self):
        if not 0 <= self.node_id <= 0xFFFF:
            raise ValueError(f"node id {self.node_id} is not 16-bit")
        if self.short_addr is None:
            object.__setattr__(self, "short_addr", self.node_id)
        object.__setattr__(self, "behavior", Behavior(self.behavior))


@dataclass(frozen=True)
class InterferenceSource:
    at_node: int
    power_dbm: int
    start_us: int
    duration_us: int

    @property
    def end_us(self) -> int:
        return self.start_us + self.duration_us


@dataclass
class WorldConfig:
    nodes: list[NodeConfig] = field(default_factory=list)
    links: dict[tuple[int, int], int] = field(default_factory=dict)
    interference: list[InterferenceSource] = field(default_factory=list)
    sir_threshold_db: float = 3.0
    jam_mode: JamMode = JamMode.DROP
    tx_cost_mw: float = 60.0
    rx_cost_mw: float = 54.0
    default_quarter_db: int = DEFAULT_QUARTER_DB
    max_backlog: int = 16


@dataclass
class NodeStats:
    frames_tx: int = 0
    frames_rx: int = 0
    frames_dropped: int = 0
    tx_airtime_us: int = 0
    rx_airtime_us: int = 0
    energy_uj: float = 0.0
    serial_errors: int = 0
    fcs_errors: int = 0
    frames_handled: int = 0


class SerialChannel:
    """Host/node serial line; SLIP framed in both directions."""

    def __init__(self):
        self.down = bytearray()  # host -> node radio
        self.up = bytearray()  # node radio -> host side behavior
        self.down_decoder = SlipDecoder()
        self.up_decoder = SlipDecoder()

    def drain(self) -> tuple[list[bytes], list[bytes], int]:
        to_send = self.down_decoder.feed(bytes(self.down))
        received = self.up_decoder.feed(bytes(self.up))
        self.down.clear()
        self.up.clear()
        errors = len(self.down_decoder.take_errors()) + len(self.up_decoder.take_errors())
        return to_send, received, errors


class VirtualNode:
    def __init__(self, cfg: NodeConfig):
        self.cfg = cfg
        self.serial = SerialChannel()
        self.stats = NodeStats()
        self.seq = 0
        self.busy_until = 0
        self.queued = 0

    @property
    def node_id(self) -> int:
        return self.cfg.node_id

    def next_seq(self) -> int:
        s = self.seq
        self.seq = (self.seq + 1) & 0xFF
        return s


@dataclass
class Transmission:
    tx_id: int
    time_us: int
    end_us: int
    from_node: int
    mpdu: bytes
    rx_qdb: dict[int, int | None]  # receiver -> rx power in quarter dBm
    outcomes: dict[int, Outcome]
    lqi: dict[int, int] = field(default_factory=dict)


@dataclass(frozen=True)
class Capture:
    time_us: int
    node_id: int
    point: str  # "tx" or "rx"
    data: bytes


class World:
    """The emulated radio environment plus its private event queue."""

    def __init__(self, config: WorldConfig | None = None):
        self.config = config or WorldConfig()
        self.now = 0
        self.nodes: dict[int, VirtualNode] = {}
        self._links: dict[tuple[int, int], list[tuple[int, int]]] = {}
        self.interference: list[InterferenceSource] = []
        self.log: list[Transmission] = []
        self.captures: list[Capture] = []
        self.capture_sinks: list = []
        self._heap: list = []
        self._seq = itertools.count()
        self._tx_ids = itertools.count()
        self._active: list[Transmission] = []
        for cfg in self.config.nodes:
            self.register_node(cfg)
        for (a, b), q in self.config.links.items():
            self._set_link(a, b, q, effective_from=0)
        for src in self.config.interference:
            self.add_interference(src.at_node, src.power_dbm, src.start_us, src.duration_us)

    def reset(self) -> None:
        sinks = self.capture_sinks
        self.__init__(self.config)
        self.capture_sinks = sinks

    # --- topology ----------------------------------------------------------

    def node(self, node_id: int) -> VirtualNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(f"node {node_id} is not registered") from None

    def register_node(self, cfg: NodeConfig) -> VirtualNode:
        if cfg.node_id in self.nodes:
            raise DuplicateNode(f"node {cfg.node_id} already registered")
        node = VirtualNode(cfg)
        self.nodes[cfg.node_id] = node
        for t, mpdu in cfg.script:
            self._schedule(max(t, self.now), self._queue_tx, node, bytes(mpdu))
            node.queued += 1
        return node

    def _set_link(self, a: int, b: int, q: int, effective_from: int) -> None:
        hist = self._links.setdefault((a, b), [])
        while hist and hist[-1][0] >= effective_from:
            hist.pop()
        hist.append((effective_from, q))

    def set_attenuation(self, from_node: int, to_node: int, quarter_db: int) -> None:
        """Set the directed link loss; applies to transmissions after ``now``."""
        self.node(from_node)
        self.node(to_node)
        if from_node == to_node:
            raise SelfLink(f"node {from_node} cannot have a link to itself")
        if not 0 <= quarter_db <= 0xFFFF:
            raise ValueError(f"attenuation {quarter_db} is not 16-bit")
        self._set_link(from_node, to_node, quarter_db, effective_from=self.now + 1)

    def attenuation(self, from_node: int, to_node: int, t_us: int | None = None) -> int:
        if from_node == to_node:
            return 0
        t = self.now if t_us is None else t_us
        hist = self._links.get((from_node, to_node))
        if hist:
            i = bisect.bisect_right(hist, (t, 0x10000)) - 1
            if i >= 0:
                return hist[i][1]
        return self.config.default_quarter_db

    def add_interference(self, at_node: int, power_dbm: int, start_us: int,
                         duration_us: int) -> InterferenceSource:
        self.node(at_node)
        if start_us < self.now:
            raise TimeInPast(f"interference start {start_us} us is before now ({self.now} us)")
        if duration_us < 0:
            raise ValueError("negative interference duration")
        src = InterferenceSource(at_node, power_dbm, start_us, duration_us)
        self.interference.append(src)
        return src

    # --- event queue -------------------------------------------------------

    def _schedule(self, t_us: int, fn, *args) -> None:
        heapq.heappush(self._heap, (t_us, next(self._seq), fn, args))

    def next_event_time(self) -> int | None:
        return self._heap[0][0] if self._heap else None

    def run_until(self, t_us: int, stop=None) -> int:
        """Process every event with time <= ``t_us``.

        ``stop(capture) -> bool`` ends the run after the timestep in which a
        matching capture was produced; the reached time is returned.
        """
        if t_us < self.now:
            raise TimeInPast(f"cannot run back to {t_us} us (now {self.now} us)")
        while self._heap and self._heap[0][0] <= t_us:
            step = self._heap[0][0]
            self.now = step
            mark = len(self.captures)
            while self._heap and self._heap[0][0] == step:
                _, _, fn, args = heapq.heappop(self._heap)
                fn(*args)
            if stop is not None and any(stop(c) for c in self.captures[mark:]):
                return step
        self.now = t_us
        return t_us

    def run_until_idle(self, limit_us: int | None = None) -> int:
        while self._heap:
            t = self._heap[0][0]
            if limit_us is not None and t > limit_us:
                break
            self.run_until(t)
        return self.now

    def drain_captures(self) -> list[Capture]:
        caps, self.captures = self.captures, []
        return caps

    # --- host side ---------------------------------------------------------

    def inject(self, node_id: int, mpdu: bytes, t_us: int | None = None) -> None:
        """Host writes an MPDU to a node's serial line for transmission.

        The MPDU content is not checked: corrupt frames go out as-is.
        """
        node = self.node(node_id)
        if not mac.MIN_MPDU <= len(mpdu) <= mac.MAX_MPDU:
            raise InvalidFrame(f"{len(mpdu)}-byte MPDU cannot be transmitted")
        if node.queued >= self.config.max_backlog:
            raise Overload(f"node {node_id} has {node.queued} frames queued")
        node.serial.down += slip_encode(mpdu)
        node.queued += 1
        t = self.now if t_us is None else max(t_us, self.now)
        self._schedule(t, self._serial_step, node)

    def write_serial(self, node_id: int, raw: bytes, direction: str = "down") -> None:
        """Put raw bytes on a serial line (no framing); used for fault tests."""
        node = self.node(node_id)
        getattr(node.serial, direction).extend(raw)
        self._schedule(self.now, self._serial_step, node)

    def node_serial_step(self, node_id: int) -> None:
        self._serial_step(self.node(node_id))

    def _serial_step(self, node: VirtualNode) -> None:
        to_send, received, errors = node.serial.drain()
        node.stats.serial_errors += errors
        for mpdu in to_send:
            if not mac.MIN_MPDU <= len(mpdu) <= mac.MAX_MPDU:
                node.stats.serial_errors += 1
                node.queued = max(0, node.queued - 1)
                continue
            self._queue_tx(node, mpdu)
        for mpdu in received:
            self._behave(node, mpdu)

    def _queue_tx(self, node: VirtualNode, mpdu: bytes) -> None:
        # caller has already counted the frame in node.queued
        start = max(self.now, node.busy_until)
        node.busy_until = start + mac.airtime(len(mpdu))
        self._schedule(start, self._start_tx, node, mpdu)

    def _start_tx(self, node: VirtualNode, mpdu: bytes) -> None:
        node.queued = max(0, node.queued - 1)
        self.transmit(node.node_id, mpdu, self.now)

    def _behave(self, node: VirtualNode, mpdu: bytes) -> None:
        node.stats.frames_handled += 1
        behavior = node.cfg.behavior
        if behavior != Behavior.ECHO:
            return
        try:
            frame = mac.decode_frame(mpdu)
        except mac.FcsMismatch:
            node.stats.fcs_errors += 1
            return
        except mac.CodecError:
            node.stats.serial_errors += 1
            return
        if frame.fcf.frame_type != mac.FrameType.DATA or frame.src.mode == mac.AddrMode.NONE:
            return
        if frame.dest.mode == mac.AddrMode.SHORT and frame.dest.value not in (
                node.cfg.short_addr, mac.BROADCAST_ADDR):
            return
        if frame.dest_pan_id not in (None, node.cfg.pan_id, mac.BROADCAST_ADDR):
            return
        src_pan = frame.src_pan_id if frame.src_pan_id is not None else frame.dest_pan_id
        req = mac.McpsDataRequest(dst_addr=frame.src, dst_pan_id=src_pan, msdu=frame.payload)
        try:
            reply = mac.build_data_mpdu(req, node.next_seq(), node.cfg.pan_id,
                                        mac.MacAddress.short(node.cfg.short_addr))
            mpdu = mac.encode_frame(reply)
        except mac.CodecError as e:
            log.debug("node %d cannot echo: %s", node.node_id, e)
            return
        node.queued += 1
        self._schedule(self.now + node.cfg.turnaround_us, self._queue_tx, node, mpdu)

    # --- channel -----------------------------------------------------------

    def transmit(self, from_node: int, mpdu: bytes, t_us: int | None = None) -> dict[int, Outcome]:
        """Put ``mpdu`` on the air from ``from_node`` starting at ``t_us``.

        Returns the per-receiver outcomes as known now; a transmission that
        starts later but overlaps can still turn a delivery into a jam,
        which the log entry reflects once the frame ends.
        """
        node = self.node(from_node)
        if len(mpdu) < mac.MIN_MPDU:
            raise InvalidFrame(f"{len(mpdu)}-byte MPDU is too short")
        if len(mpdu) > mac.MAX_MPDU:
            raise InvalidFrame(f"{len(mpdu)}-byte MPDU is too long")
        t = self.now if t_us is None else t_us
        if t < self.now:
            raise TimeInPast(f"transmission at {t} us is before now ({self.now} us)")
        dur = mac.airtime(len(mpdu))
        rx_qdb = {}
        for r in sorted(self.nodes):
            if r == from_node:
                continue
            loss = self.attenuation(from_node, r, t)
            rx_qdb[r] = None if loss == ISOLATION else 4 * node.cfg.tx_power_dbm - loss
        tx = Transmission(next(self._tx_ids), t, t + dur, from_node, bytes(mpdu), rx_qdb, {})
        node.stats.frames_tx += 1
        node.stats.tx_airtime_us += dur
        node.busy_until = max(node.busy_until, tx.end_us)
        self.log.append(tx)
        self._active.append(tx)
        for r in rx_qdb:
            tx.outcomes[r] = self._evaluate(tx, r)
        self._schedule(tx.end_us, self._end_tx, tx)
        return dict(tx.outcomes)

    def _evaluate(self, tx: Transmission, r: int) -> Outcome:
        rx = tx.rx_qdb.get(r)
        if rx is None:
            return Outcome.ISOLATED
        if rx < 4 * self.nodes[r].cfg.sensitivity_dbm:
            return Outcome.BELOW_SENSITIVITY
        threshold_q = 4 * self.config.sir_threshold_db
        for at_node, power in self._interferers(tx):
            loss = self.attenuation(at_node, r, tx.time_us)
            if loss == ISOLATION:
                continue
            if rx - (4 * power - loss) < threshold_q:
                return Outcome.JAMMED
        return Outcome.DELIVERED

    def _interferers(self, tx: Transmission):
        for src in self.interference:
            if src.start_us < tx.end_us and tx.time_us < src.end_us:
                yield src.at_node, src.power_dbm
        for other in self._active:
            if other is tx or other.from_node == tx.from_node:
                continue
            if other.time_us < tx.end_us and tx.time_us < other.end_us:
                yield other.from_node, self.nodes[other.from_node].cfg.tx_power_dbm

    def _emit(self, cap: Capture) -> None:
        self.captures.append(cap)
        for sink in self.capture_sinks:
            sink(cap)

    def _end_tx(self, tx: Transmission) -> None:
        dur = tx.end_us - tx.time_us
        self._emit(Capture(self.now, tx.from_node, "tx", tx.mpdu))
        corrupt = self.config.jam_mode == JamMode.CORRUPT
        for r in sorted(tx.rx_qdb):
            outcome = self._evaluate(tx, r)
            tx.outcomes[r] = outcome
            node = self.nodes[r]
            if outcome == Outcome.ISOLATED:
                continue
            if outcome == Outcome.BELOW_SENSITIVITY:
                node.stats.frames_dropped += 1
                continue
            if outcome == Outcome.JAMMED:
                node.stats.frames_dropped += 1
                if not corrupt:
                    continue
                data = bytearray(tx.mpdu)
                data[-3] ^= 0xFF  # last byte before the FCS
                data = bytes(data)
            else:
                node.stats.frames_rx += 1
                data = tx.mpdu
            node.stats.rx_airtime_us += dur
            margin_q = tx.rx_qdb[r] - 4 * node.cfg.sensitivity_dbm
            tx.lqi[r] = max(0, min(255, margin_q))
            node.serial.up += slip_encode(data)
            self._emit(Capture(self.now, r, "rx", data))
            self._schedule(self.now, self._serial_step, node)
        horizon = self.now - mac.airtime(mac.MAX_MPDU)
        self._active = [a for a in self._active if a.end_us > horizon]

    # --- accounting --------------------------------------------------------

    def account(self) -> dict[int, NodeStats]:
        out = {}
        for nid in sorted(self.nodes):
            s = replace(self.nodes[nid].stats)
            s.energy_uj = (s.tx_airtime_us * self.config.tx_cost_mw
                           + s.rx_airtime_us * self.config.rx_cost_mw) / 1000.0
            out[nid] = s
        return out
