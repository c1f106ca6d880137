"""EmuCI server side: session handling around a backend world, TCP listeners.

All world mutations run under one lock, in command-arrival order, no matter
how many sessions or transport threads are attached.
"""

from __future__ import annotations

import collections
import enum
import logging
import socket
import socketserver
import threading

from . import backend, emuci, pcap
from .backend import Behavior, NodeConfig, World
from .emuci import Message, MsgType, NackCode

log = logging.getLogger(__name__)
trace_log = logging.getLogger("hilsim.trace")

DEFAULT_MAX_BACKLOG = 1024

_WORLD_NACKS = {
    backend.UnknownNode: NackCode.UNKNOWN_NODE,
    backend.DuplicateNode: NackCode.DUPLICATE_NODE,
    backend.SelfLink: NackCode.SELF_LINK,
    backend.TimeInPast: NackCode.TIME_IN_PAST,
    backend.Overload: NackCode.OVERLOAD,
    backend.InvalidFrame: NackCode.INVALID_PARAMETER,
    emuci.MalformedPayload: NackCode.MALFORMED_PAYLOAD,
    pcap.PcapError: NackCode.MALFORMED_PAYLOAD,
    ValueError: NackCode.INVALID_PARAMETER,
}


class SessionState(enum.Enum):
    AWAIT_HELLO = "awaitHello"
    READY = "ready"
    CLOSED = "closed"


class ServerSession:
    def __init__(self, server: EmulationServer, name: str):
        self.server = server
        self.name = name
        self.state = SessionState.AWAIT_HELLO
        self.decoder = emuci.MessageDecoder()
        self.scope: frozenset[int] | None = frozenset()  # None = all nodes
        self.outbox: collections.deque[bytes] = collections.deque()
        self.notify = None  # called after output is queued
        self.close_reason = ""

    @property
    def closed(self) -> bool:
        return self.state == SessionState.CLOSED

    def wants(self, node_id: int) -> bool:
        return self.scope is None or node_id in self.scope

    def receive(self, data: bytes) -> None:
        if self.closed:
            return
        with self.server.lock:
            try:
                msgs = self.decoder.feed(data)
            except emuci.FramingError as e:
                self.close(f"framing error: {e}")
                return
            for m in msgs:
                if self.closed:
                    break
                if self.server.trace:
                    trace_log.debug("%s <- %s", self.name, emuci.hexdump(m))
                self.server.handle(self, m)

    def send(self, m: Message) -> None:
        if self.closed:
            return
        if self.server.trace:
            trace_log.debug("%s -> %s", self.name, emuci.hexdump(m))
        self.outbox.append(emuci.encode_message(m))
        if self.notify:
            self.notify()

    def take_output(self) -> bytes:
        parts = []
        while self.outbox:
            parts.append(self.outbox.popleft())
        return b"".join(parts)

    def close(self, reason: str = "") -> None:
        if self.closed:
            return
        self.state = SessionState.CLOSED
        self.close_reason = reason
        log.info("session %s closed%s", self.name, f": {reason}" if reason else "")
        if self.notify:
            self.notify()


class EmulationServer:
    """Serves one backend world to any number of EmuCI sessions."""

    def __init__(self, world: World, version: int = emuci.PROTOCOL_VERSION,
                 capture_path=None, trace: bool = False,
                 max_backlog: int = DEFAULT_MAX_BACKLOG):
        self.world = world
        self.version = version
        self.trace = trace
        self.max_backlog = max_backlog
        self.lock = threading.RLock()
        self.sessions: list[ServerSession] = []
        self.capture_path = capture_path
        self.capture_writer: pcap.PcapWriter | None = None
        self._names = 0
        self._open_capture()

    def _open_capture(self) -> None:
        if self.capture_writer:
            self.capture_writer.close()
            self.world.capture_sinks.remove(self._write_capture)
        if self.capture_path:
            self.capture_writer = pcap.PcapWriter(self.capture_path)
            self.world.capture_sinks.append(self._write_capture)

    def _write_capture(self, cap: backend.Capture) -> None:
        self.capture_writer.append(cap.time_us, cap.data)

    def open_session(self) -> ServerSession:
        with self.lock:
            self._names += 1
            s = ServerSession(self, f"s{self._names}")
            self.sessions.append(s)
            return s

    def close(self) -> None:
        with self.lock:
            for s in self.sessions:
                s.close("server shutdown")
            if self.capture_writer:
                self.capture_writer.close()

    # --- dispatch ----------------------------------------------------------

    def handle(self, session: ServerSession, m: Message) -> None:
        def nack(code, detail=""):
            session.send(Message(MsgType.NACK, m.seq, emuci.pack_nack(code, detail)))

        if m.type not in emuci.COMMANDS:
            nack(NackCode.UNKNOWN_COMMAND, f"message type 0x{m.type:02X}")
            return
        if m.type == MsgType.HELLO:
            self._hello(session, m)
            return
        if session.state != SessionState.READY:
            nack(NackCode.NOT_READY, "HELLO required first")
            return
        handler = {
            MsgType.REGISTER_NODE: self._register,
            MsgType.INJECT_FRAME: self._inject,
            MsgType.SET_ATTENUATION: self._attenuation,
            MsgType.INJECT_INTERFERENCE: self._interference,
            MsgType.ADVANCE_TIME: self._advance,
            MsgType.SUBSCRIBE_FRAMES: self._subscribe,
            MsgType.GET_STATS: self._stats,
        }[MsgType(m.type)]
        try:
            reply = handler(session, m)
        except tuple(_WORLD_NACKS) as e:
            code = next(c for cls, c in _WORLD_NACKS.items() if isinstance(e, cls))
            self._route(session)
            nack(code, str(e))
            return
        self._route(session)
        session.send(reply or Message(MsgType.ACK, m.seq))

    def _hello(self, session: ServerSession, m: Message) -> None:
        if len(m.payload) != 1:
            session.send(Message(MsgType.NACK, m.seq,
                                 emuci.pack_nack(NackCode.MALFORMED_PAYLOAD, "HELLO carries one byte")))
            return
        if m.payload[0] != self.version:
            session.send(Message(MsgType.NACK, m.seq, emuci.pack_nack(
                NackCode.VERSION_MISMATCH,
                f"client v{m.payload[0]}, server v{self.version}")))
            session.close("version mismatch")
            return
        if session.state == SessionState.AWAIT_HELLO:
            others = [s for s in self.sessions
                      if s is not session and s.state == SessionState.READY]
            if not others:
                # a new experiment starts from the initial world definition
                self.world.reset()
                self._open_capture()
            session.state = SessionState.READY
        session.send(Message(MsgType.ACK, m.seq, bytes([self.version])))

    def _register(self, session, m):
        f = emuci.unpack_register(m.payload)
        self.world.register_node(NodeConfig(
            node_id=f["node_id"], short_addr=f["short_addr"], pan_id=f["pan_id"],
            tx_power_dbm=f["tx_power_dbm"], sensitivity_dbm=f["sensitivity_dbm"],
            behavior=Behavior(f["behavior"]), turnaround_us=f["turnaround_us"],
            script=f["script"]))

    def _inject(self, session, m):
        node_id, raw = emuci.unpack_node_record(m.payload)
        self.world.node(node_id)
        try:
            rec = pcap.decode_record(raw)
        except pcap.PcapError as e:
            raise emuci.MalformedPayload(f"record framing: {e}") from None
        self.world.inject(node_id, rec.data, rec.time_us)
        self.world.run_until(self.world.now)

    def _attenuation(self, session, m):
        self.world.set_attenuation(*emuci.unpack_attenuation(m.payload))

    def _interference(self, session, m):
        at_node, power, start, duration = emuci.unpack_interference(m.payload)
        self.world.add_interference(at_node, power, start, duration)

    def _advance(self, session, m):
        until, flags = emuci.unpack_advance(m.payload)
        if until < self.world.now:
            raise backend.TimeInPast(f"cannot advance to {until} us (now {self.world.now} us)")
        stop = None
        if flags & emuci.ADVANCE_STOP_ON_INDICATION:
            stop = lambda cap: session.wants(cap.node_id)  # noqa: E731
        reached = self.world.run_until(until, stop=stop)
        self._route(session)
        return Message(MsgType.TIME_GRANT, m.seq, emuci.pack_time(reached))

    def _subscribe(self, session, m):
        scope = emuci.unpack_subscribe(m.payload)
        if scope is not None:
            for nid in scope:
                self.world.node(nid)
        session.scope = scope

    def _stats(self, session, m):
        return Message(MsgType.STATS, m.seq, emuci.pack_stats(self.world.account()))

    def _route(self, origin: ServerSession) -> None:
        """Fan pending captures out as FRAME_INDICATIONs to subscribed sessions."""
        caps = self.world.drain_captures()
        if not caps:
            return
        for s in self.sessions:
            if s.state != SessionState.READY:
                continue
            for cap in caps:
                if s.wants(cap.node_id):
                    rec = pcap.encode_record(cap.time_us, cap.data)
                    s.send(Message(MsgType.FRAME_INDICATION, 0,
                                   emuci.pack_node_record(cap.node_id, rec)))
            if s is not origin and len(s.outbox) > self.max_backlog:
                s.close(f"receiver too slow ({len(s.outbox)} messages queued)")
        self.sessions = [s for s in self.sessions if not s.closed or s is origin]


# --- TCP transport -------------------------------------------------------------

class _EmuciHandler(socketserver.BaseRequestHandler):
    def handle(self):
        server: EmulationServer = self.server.emulation
        session = server.open_session()
        cond = threading.Condition()
        session.notify = lambda: _notify(cond)
        sock: socket.socket = self.request
        writer = threading.Thread(target=_writer, args=(session, sock, cond), daemon=True)
        writer.start()
        log.info("session %s from %s:%d", session.name, *self.client_address[:2])
        try:
            while not session.closed:
                data = sock.recv(65536)
                if not data:
                    break
                session.receive(data)
        except OSError as e:
            log.info("session %s: %s", session.name, e)
        finally:
            with server.lock:
                session.close(session.close_reason or "peer closed")
            writer.join(timeout=5)
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass


def _notify(cond: threading.Condition) -> None:
    with cond:
        cond.notify()


def _writer(session: ServerSession, sock: socket.socket, cond: threading.Condition) -> None:
    while True:
        with cond:
            while not session.outbox and not session.closed:
                cond.wait(0.5)
            data = session.take_output()
            done = session.closed
        if data:
            try:
                sock.sendall(data)
            except OSError:
                return
        if done and not session.outbox:
            return


class _TcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class TcpEmuciServer:
    """EmuCI over TCP. ``port=0`` picks a free port (see ``address``)."""

    def __init__(self, emulation: EmulationServer, host: str = "localhost",
                 port: int = emuci.DEFAULT_PORT):
        self.emulation = emulation
        self._srv = _TcpServer((host, port), _EmuciHandler)
        self._srv.emulation = emulation
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._srv.server_address[:2]

    def serve_forever(self) -> None:
        self._srv.serve_forever(poll_interval=0.1)

    def start(self) -> TcpEmuciServer:
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._srv.shutdown()
        self._srv.server_close()
        self.emulation.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


# --- legacy PCAP-over-TCP --------------------------------------------------------

class _LegacyHandler(socketserver.BaseRequestHandler):
    def handle(self):
        legacy: LegacyPcapServer = self.server.legacy
        sock: socket.socket = self.request
        sock.sendall(pcap.encode_global_header())
        dec = pcap.PcapStreamDecoder()
        try:
            while True:
                data = sock.recv(65536)
                if not data:
                    break
                for rec in dec.feed(data):
                    sock.sendall(legacy.ingest(rec))
            dec.close()
        except pcap.PcapError as e:
            log.warning("legacy stream from %s rejected: %s", self.client_address, e)
        except OSError as e:
            log.info("legacy peer: %s", e)
            return
        try:
            sock.sendall(legacy.finish())
            sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass


class LegacyPcapServer:
    """Raw PCAP over TCP, no EmuCI framing.

    The server sends a global header, then every capture as a record.
    Records the client sends are injected at ``node_id`` (default: lowest
    registered node) and drive the world clock forward to their timestamps.
    """

    def __init__(self, world: World, host: str = "localhost",
                 port: int = emuci.DEFAULT_PORT, node_id: int | None = None):
        self.world = world
        self.node_id = node_id
        self.lock = threading.RLock()
        self._srv = _TcpServer((host, port), _LegacyHandler)
        self._srv.legacy = self
        self._thread = None

    @property
    def address(self) -> tuple[str, int]:
        return self._srv.server_address[:2]

    def _records(self) -> bytes:
        return b"".join(pcap.encode_record(c.time_us, c.data)
                        for c in self.world.drain_captures())

    def ingest(self, rec: pcap.PcapRecord) -> bytes:
        with self.lock:
            target = self.node_id if self.node_id is not None else min(self.world.nodes)
            t = max(rec.time_us, self.world.now)
            self.world.run_until(t)
            try:
                self.world.inject(target, rec.data, t)
            except backend.WorldError as e:
                log.warning("legacy record dropped: %s", e)
            self.world.run_until(self.world.now)
            return self._records()

    def finish(self) -> bytes:
        with self.lock:
            self.world.run_until_idle()
            return self._records()

    def serve_forever(self) -> None:
        self._srv.serve_forever(poll_interval=0.1)

    def start(self) -> LegacyPcapServer:
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._srv.shutdown()
        self._srv.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
