"""EmuCI wire format: length-prefixed command/response/indication messages.

Every message is ``length:u32 | type:u8 | seq:u8 | payload`` with all
integers big-endian and ``length`` counting everything after itself.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

PROTOCOL_VERSION = 1
DEFAULT_PORT = 4242
MAX_PAYLOAD = (1 << 24) - 1
MAX_LENGTH = MAX_PAYLOAD + 2

ADVANCE_STOP_ON_INDICATION = 0x01


class MsgType(enum.IntEnum):
    HELLO = 0x01
    REGISTER_NODE = 0x02
    INJECT_FRAME = 0x03
    SET_ATTENUATION = 0x04
    INJECT_INTERFERENCE = 0x05
    ADVANCE_TIME = 0x06
    SUBSCRIBE_FRAMES = 0x07
    GET_STATS = 0x08
    ACK = 0x80
    NACK = 0x81
    TIME_GRANT = 0x82
    STATS = 0x83
    FRAME_INDICATION = 0xC0


COMMANDS = frozenset(t for t in MsgType if t < 0x80)


class NackCode(enum.IntEnum):
    VERSION_MISMATCH = 0x01
    NOT_READY = 0x02
    UNKNOWN_NODE = 0x03
    MALFORMED_PAYLOAD = 0x04
    SELF_LINK = 0x05
    TIME_IN_PAST = 0x06
    UNKNOWN_COMMAND = 0x07
    OVERLOAD = 0x08
    DUPLICATE_NODE = 0x09
    INVALID_PARAMETER = 0x0A


class EmuciError(Exception):
    pass


class FramingError(EmuciError):
    """The byte stream cannot be resynchronized; close the connection."""


class FrameTooLarge(FramingError):
    pass


class Truncated(EmuciError):
    pass


class MalformedPayload(EmuciError):
    pass


@dataclass(frozen=True)
class Message:
    type: int
    seq: int
    payload: bytes = b""

    @property
    def name(self) -> str:
        try:
            return MsgType(self.type).name
        except ValueError:
            return f"0x{self.type:02X}"


def encode_message(m: Message) -> bytes:
    if len(m.payload) > MAX_PAYLOAD:
        raise FrameTooLarge(f"payload of {len(m.payload)} bytes")
    return struct.pack(">IBB", 2 + len(m.payload), m.type, m.seq) + m.payload


class MessageDecoder:
    """Chunk-boundary invariant decoder.

    A declared length outside ``2..MAX_LENGTH`` raises :class:`FramingError`
    before anything is buffered; the decoder is dead afterwards.
    """

    def __init__(self, max_length: int = MAX_LENGTH):
        self.max_length = max_length
        self._buf = bytearray()
        self.dead = False

    def feed(self, chunk: bytes) -> list[Message]:
        if self.dead:
            raise FramingError("decoder closed after a framing error")
        self._buf += chunk
        out = []
        pos = 0
        while len(self._buf) - pos >= 4:
            (length,) = struct.unpack_from(">I", self._buf, pos)
            if length > self.max_length or length < 2:
                self.dead = True
                self._buf.clear()
                cls = FrameTooLarge if length > self.max_length else FramingError
                raise cls(f"declared length {length:#x}")
            end = pos + 4 + length
            if len(self._buf) < end:
                break
            out.append(Message(self._buf[pos + 4], self._buf[pos + 5],
                               bytes(self._buf[pos + 6:end])))
            pos = end
        del self._buf[:pos]
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)

    def close(self) -> None:
        if self._buf and not self.dead:
            raise Truncated(f"stream ended with {len(self._buf)} bytes of a partial message")


# --- payload layouts ---------------------------------------------------------

_REGISTER = struct.Struct(">HHHbbBI")
_SCRIPT_ENTRY = struct.Struct(">QB")
_STATS_ENTRY = struct.Struct(">HIIIQQd")
BEHAVIOR_CODES = {"sink": 0, "echo": 1, "scripted": 2}


def _unpack(fmt: str | struct.Struct, data: bytes, exact: bool = True):
    s = fmt if isinstance(fmt, struct.Struct) else struct.Struct(fmt)
    if len(data) < s.size or (exact and len(data) != s.size):
        raise MalformedPayload(f"expected {s.size} bytes, got {len(data)}")
    return s.unpack_from(data)


def pack_register(node_id, short_addr, pan_id, tx_power_dbm=0, sensitivity_dbm=-85,
                  behavior="sink", turnaround_us=0, script=()) -> bytes:
    out = bytearray(_REGISTER.pack(node_id, short_addr, pan_id, tx_power_dbm,
                                   sensitivity_dbm, BEHAVIOR_CODES[behavior], turnaround_us))
    if script:
        out += struct.pack(">H", len(script))
        for t, mpdu in script:
            out += _SCRIPT_ENTRY.pack(t, len(mpdu)) + bytes(mpdu)
    return bytes(out)


def unpack_register(data: bytes) -> dict:
    fields = _unpack(_REGISTER, data, exact=False)
    names = {v: k for k, v in BEHAVIOR_CODES.items()}
    if fields[5] not in names:
        raise MalformedPayload(f"behavior code {fields[5]}")
    out = dict(zip(("node_id", "short_addr", "pan_id", "tx_power_dbm",
                    "sensitivity_dbm"), fields[:5]))
    out["behavior"] = names[fields[5]]
    out["turnaround_us"] = fields[6]
    rest = data[_REGISTER.size:]
    script = []
    if rest:
        (count,) = _unpack(">H", rest[:2])
        pos = 2
        for _ in range(count):
            t, n = _unpack(_SCRIPT_ENTRY, rest[pos:pos + _SCRIPT_ENTRY.size])
            pos += _SCRIPT_ENTRY.size
            if pos + n > len(rest):
                raise MalformedPayload("script entry runs past the payload")
            script.append((t, bytes(rest[pos:pos + n])))
            pos += n
        if pos != len(rest):
            raise MalformedPayload("trailing bytes after script")
    out["script"] = tuple(script)
    return out


def pack_node_record(node_id: int, record: bytes) -> bytes:
    return struct.pack(">H", node_id) + record


def unpack_node_record(data: bytes) -> tuple[int, bytes]:
    if len(data) < 2:
        raise MalformedPayload("missing node id")
    return struct.unpack_from(">H", data)[0], bytes(data[2:])


def pack_attenuation(from_node: int, to_node: int, quarter_db: int) -> bytes:
    return struct.pack(">HHH", from_node, to_node, quarter_db)


def unpack_attenuation(data: bytes) -> tuple[int, int, int]:
    return _unpack(">HHH", data)


def pack_interference(at_node: int, power_dbm: int, start_us: int, duration_us: int) -> bytes:
    return struct.pack(">HbQI", at_node, power_dbm, start_us, duration_us)


def unpack_interference(data: bytes) -> tuple[int, int, int, int]:
    return _unpack(">HbQI", data)


def pack_advance(until_us: int, flags: int = 0) -> bytes:
    if flags:
        return struct.pack(">QB", until_us, flags)
    return struct.pack(">Q", until_us)


def unpack_advance(data: bytes) -> tuple[int, int]:
    if len(data) == 8:
        return _unpack(">Q", data)[0], 0
    return _unpack(">QB", data)


def pack_time(t_us: int) -> bytes:
    return struct.pack(">Q", t_us)


def unpack_time(data: bytes) -> int:
    return _unpack(">Q", data)[0]


def pack_subscribe(nodes=None) -> bytes:
    """``nodes=None`` subscribes to every capture point."""
    if nodes is None:
        return b"\x00"
    nodes = list(nodes)
    return struct.pack(f">BH{len(nodes)}H", 1, len(nodes), *nodes)


def unpack_subscribe(data: bytes):
    if data == b"\x00":
        return None
    if len(data) < 3 or data[0] != 1:
        raise MalformedPayload("subscribe scope must be 0 (all) or 1 (node list)")
    (count,) = struct.unpack_from(">H", data, 1)
    return frozenset(_unpack(f">{count}H", data[3:]))


def pack_nack(code: NackCode, detail: str = "") -> bytes:
    return bytes([int(code)]) + detail.encode("utf-8", "replace")


def unpack_nack(data: bytes) -> tuple[int, str]:
    if not data:
        raise MalformedPayload("empty NACK")
    return data[0], data[1:].decode("utf-8", "replace")


STATS_FIELDS = ("frames_tx", "frames_rx", "frames_dropped", "tx_airtime_us",
                "rx_airtime_us", "energy_uj")


def pack_stats(stats: dict) -> bytes:
    out = bytearray(struct.pack(">H", len(stats)))
    for nid in sorted(stats):
        s = stats[nid]
        out += _STATS_ENTRY.pack(nid, *(getattr(s, f) for f in STATS_FIELDS))
    return bytes(out)


def unpack_stats(data: bytes) -> dict[int, dict]:
    (count,) = _unpack(">H", data[:2])
    if len(data) != 2 + count * _STATS_ENTRY.size:
        raise MalformedPayload("STATS length does not match node count")
    out = {}
    for i in range(count):
        nid, *vals = _STATS_ENTRY.unpack_from(data, 2 + i * _STATS_ENTRY.size)
        out[nid] = dict(zip(STATS_FIELDS, vals))
    return out


def hexdump(m: Message) -> str:
    raw = encode_message(m)
    return f"{m.name:<19} seq={m.seq:3d} len={len(raw):5d} {raw.hex(' ')}"
