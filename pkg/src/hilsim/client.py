"""Blocking EmuCI client plus its two transports (in-process and TCP)."""

from __future__ import annotations

import collections
import socket

from . import emuci, pcap
from .emuci import Message, MsgType, NackCode


class ConnectionClosed(ConnectionError):
    pass


class NackError(Exception):
    def __init__(self, code: int, detail: str = "", command: str = ""):
        try:
            self.code = NackCode(code)
        except ValueError:
            self.code = code
        self.detail = detail
        name = getattr(self.code, "name", str(code))
        super().__init__(f"{command} NACK {name}: {detail}".strip())


class VersionMismatch(NackError):
    pass


class LoopbackTransport:
    """Hands bytes straight to a server session in the same process."""

    def __init__(self, server):
        self.session = server.open_session()

    def send(self, data: bytes) -> None:
        if self.session.closed:
            raise ConnectionClosed(f"session closed: {self.session.close_reason}")
        self.session.receive(data)

    def recv(self) -> bytes:
        return self.session.take_output()

    def close(self) -> None:
        with self.session.server.lock:
            self.session.close("client closed")


class TcpTransport:
    def __init__(self, host: str = "localhost", port: int = emuci.DEFAULT_PORT,
                 timeout: float | None = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def send(self, data: bytes) -> None:
        self.sock.sendall(data)

    def recv(self) -> bytes:
        return self.sock.recv(65536)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class EmuciClient:
    """One EmuCI session. Commands block until their response arrives.

    FRAME_INDICATIONs met while waiting are queued on ``inbox`` as
    ``(node_id, PcapRecord)``; the owner drains it between steps. With
    ``record=True`` every message in both directions is kept in ``trace``.
    """

    def __init__(self, transport, record: bool = False):
        self.transport = transport
        self.decoder = emuci.MessageDecoder()
        self.inbox: collections.deque = collections.deque()
        self._pending: collections.deque[Message] = collections.deque()
        self._seq = 0
        self.record = record
        self.trace: list[tuple[str, Message]] = []
        self.ready = False
        self.server_version = None

    def _next_seq(self) -> int:
        self._seq = self._seq % 0xFF + 1
        return self._seq

    def _read(self) -> None:
        data = self.transport.recv()
        if not data:
            raise ConnectionClosed("connection closed by the emulation server")
        for m in self.decoder.feed(data):
            if self.record:
                self.trace.append(("in", m))
            if m.type == MsgType.FRAME_INDICATION:
                node_id, raw = emuci.unpack_node_record(m.payload)
                self.inbox.append((node_id, pcap.decode_record(raw)))
            else:
                self._pending.append(m)

    def request(self, mtype: int, payload: bytes = b"") -> Message:
        m = Message(mtype, self._next_seq(), payload)
        if self.record:
            self.trace.append(("out", m))
        self.transport.send(emuci.encode_message(m))
        while True:
            while self._pending:
                r = self._pending.popleft()
                if r.seq == m.seq:
                    if r.type == MsgType.NACK:
                        code, detail = emuci.unpack_nack(r.payload)
                        cls = VersionMismatch if code == NackCode.VERSION_MISMATCH else NackError
                        raise cls(code, detail, MsgType(mtype).name if mtype in
                                  MsgType._value2member_map_ else f"0x{mtype:02X}")
                    return r
            self._read()

    # --- commands ----------------------------------------------------------

    def hello(self, version: int = emuci.PROTOCOL_VERSION) -> int:
        r = self.request(MsgType.HELLO, bytes([version]))
        self.server_version = r.payload[0] if r.payload else None
        self.ready = True
        return self.server_version

    def register_node(self, node_id: int, short_addr: int | None = None, pan_id: int = 0x0022,
                      tx_power_dbm: int = 0, sensitivity_dbm: int = -85,
                      behavior: str = "sink", turnaround_us: int = 0, script=()) -> None:
        self.request(MsgType.REGISTER_NODE, emuci.pack_register(
            node_id, node_id if short_addr is None else short_addr, pan_id,
            tx_power_dbm, sensitivity_dbm, behavior, turnaround_us, script))

    def inject_frame(self, node_id: int, record: bytes) -> None:
        self.request(MsgType.INJECT_FRAME, emuci.pack_node_record(node_id, record))

    def set_attenuation(self, from_node: int, to_node: int, quarter_db: int) -> None:
        self.request(MsgType.SET_ATTENUATION,
                     emuci.pack_attenuation(from_node, to_node, quarter_db))

    def inject_interference(self, at_node: int, power_dbm: int, start_us: int,
                            duration_us: int) -> None:
        self.request(MsgType.INJECT_INTERFERENCE,
                     emuci.pack_interference(at_node, power_dbm, start_us, duration_us))

    def advance_time(self, until_us: int, stop_on_indication: bool = False) -> int:
        flags = emuci.ADVANCE_STOP_ON_INDICATION if stop_on_indication else 0
        r = self.request(MsgType.ADVANCE_TIME, emuci.pack_advance(until_us, flags))
        return emuci.unpack_time(r.payload)

    def subscribe_frames(self, nodes=None) -> None:
        self.request(MsgType.SUBSCRIBE_FRAMES, emuci.pack_subscribe(nodes))

    def get_stats(self) -> dict[int, dict]:
        return emuci.unpack_stats(self.request(MsgType.GET_STATS).payload)

    def close(self) -> None:
        self.transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
