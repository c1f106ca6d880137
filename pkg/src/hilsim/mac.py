"""IEEE 802.15.4-2006 MAC frame codec and MCPS-DATA primitives."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

MAX_MPDU = 127  # aMaxPHYPacketSize
MIN_MPDU = 5  # FCF + seq + FCS
FCS_LEN = 2
BROADCAST_ADDR = 0xFFFF

SHR_PHR_BYTES = 6  # preamble 4 + SFD 1 + PHR 1
US_PER_BYTE = 32  # 250 kbps O-QPSK


class CodecError(ValueError):
    """Base class for frame codec failures."""


class FcsMismatch(CodecError):
    pass


class Truncated(CodecError):
    pass


class Unsupported(CodecError):
    pass


class FrameTooLong(CodecError):
    pass


class InvalidParameter(CodecError):
    pass


class FrameType(enum.IntEnum):
    BEACON = 0
    DATA = 1
    ACK = 2
    MAC_COMMAND = 3


class AddrMode(enum.IntEnum):
    NONE = 0
    SHORT = 2
    EXTENDED = 3


class MacStatus(enum.IntEnum):
    # status codes as assigned in IEEE 802.15.4-2006 table 78
    SUCCESS = 0x00
    CHANNEL_ACCESS_FAILURE = 0xE1
    FRAME_TOO_LONG = 0xE5
    INVALID_PARAMETER = 0xE8
    NO_ACK = 0xE9
    TRANSACTION_OVERFLOW = 0xF1


# --- FCS ---------------------------------------------------------------------

def _make_table(poly: int = 0x8408) -> tuple[int, ...]:
    table = []
    for i in range(256):
        crc = i
        for _ in range(8):
            crc = (crc >> 1) ^ poly if crc & 1 else crc >> 1
        table.append(crc)
    return tuple(table)


_FCS_TABLE = _make_table()


def compute_fcs(data: bytes) -> int:
    """ITU-T CRC-16 as used for the 802.15.4 FCS (reflected 0x1021, init 0)."""
    crc = 0
    for b in data:
        crc = (crc >> 8) ^ _FCS_TABLE[(crc ^ b) & 0xFF]
    return crc


def fcs_bytes(data: bytes) -> bytes:
    return struct.pack("<H", compute_fcs(data))


def airtime(psdu_len: int) -> int:
    """On-air duration in microseconds of a PSDU of ``psdu_len`` bytes."""
    if not MIN_MPDU <= psdu_len <= MAX_MPDU:
        raise InvalidParameter(f"PSDU length {psdu_len} outside {MIN_MPDU}..{MAX_MPDU}")
    return (SHR_PHR_BYTES + psdu_len) * US_PER_BYTE


# --- frame types -------------------------------------------------------------

@dataclass(frozen=True)
class MacAddress:
    mode: AddrMode = AddrMode.NONE
    value: int = 0

    def __post_init__(self):
        try:
            mode = AddrMode(self.mode)
        except ValueError:
            raise InvalidParameter(f"reserved addressing mode {self.mode}") from None
        object.__setattr__(self, "mode", mode)
        if mode == AddrMode.NONE and self.value != 0:
            raise InvalidParameter("address mode None carries no address")
        limit = 1 << (16 if mode == AddrMode.SHORT else 64)
        if not 0 <= self.value < limit:
            raise InvalidParameter(f"address {self.value:#x} out of range for {mode.name}")

    @classmethod
    def short(cls, value: int) -> MacAddress:
        return cls(AddrMode.SHORT, value)

    @classmethod
    def extended(cls, value: int) -> MacAddress:
        return cls(AddrMode.EXTENDED, value)

    @property
    def size(self) -> int:
        return {AddrMode.NONE: 0, AddrMode.SHORT: 2, AddrMode.EXTENDED: 8}[self.mode]

    def __str__(self):
        if self.mode == AddrMode.NONE:
            return "-"
        if self.mode == AddrMode.SHORT:
            return f"{self.value:04x}"
        return ":".join(f"{b:02x}" for b in self.value.to_bytes(8, "big"))


NO_ADDRESS = MacAddress()


@dataclass(frozen=True)
class FrameControl:
    frame_type: FrameType = FrameType.DATA
    security_enabled: bool = False
    frame_pending: bool = False
    ack_request: bool = False
    pan_id_compression: bool = False
    dest_addr_mode: AddrMode = AddrMode.NONE
    frame_version: int = 0
    src_addr_mode: AddrMode = AddrMode.NONE

    def to_int(self) -> int:
        return (
            int(self.frame_type)
            | self.security_enabled << 3
            | self.frame_pending << 4
            | self.ack_request << 5
            | self.pan_id_compression << 6
            | int(self.dest_addr_mode) << 10
            | self.frame_version << 12
            | int(self.src_addr_mode) << 14
        )

    @classmethod
    def from_int(cls, value: int) -> FrameControl:
        ftype = value & 0x7
        if ftype > 3:
            raise Unsupported(f"reserved frame type {ftype}")
        if value >> 3 & 1:
            raise Unsupported("security-enabled frames are not supported")
        dmode, smode = value >> 10 & 3, value >> 14 & 3
        if dmode == 1 or smode == 1:
            raise Unsupported("reserved addressing mode 1")
        version = value >> 12 & 3
        if version > 1:
            raise Unsupported(f"frame version {version}")
        return cls(
            frame_type=FrameType(ftype),
            frame_pending=bool(value >> 4 & 1),
            ack_request=bool(value >> 5 & 1),
            pan_id_compression=bool(value >> 6 & 1),
            dest_addr_mode=AddrMode(dmode),
            frame_version=version,
            src_addr_mode=AddrMode(smode),
        )


@dataclass(frozen=True)
class MacFrame:
    fcf: FrameControl
    seq: int = 0
    dest_pan_id: int | None = None
    dest: MacAddress = NO_ADDRESS
    src_pan_id: int | None = None
    src: MacAddress = NO_ADDRESS
    payload: bytes = b""

    def header_len(self) -> int:
        n = 3 + self.dest.size + self.src.size
        if self.dest_pan_id is not None:
            n += 2
        if self.src_pan_id is not None:
            n += 2
        return n

    def encoded_len(self) -> int:
        return self.header_len() + len(self.payload) + FCS_LEN

    def validate(self) -> None:
        fcf = self.fcf
        if fcf.security_enabled:
            raise InvalidParameter("security is not supported")
        for m in (fcf.dest_addr_mode, fcf.src_addr_mode):
            if int(m) not in (0, 2, 3):
                raise InvalidParameter(f"reserved addressing mode {int(m)}")
        if fcf.frame_version not in (0, 1):
            raise InvalidParameter(f"frame version {fcf.frame_version}")
        if fcf.dest_addr_mode != self.dest.mode or fcf.src_addr_mode != self.src.mode:
            raise InvalidParameter("FCF addressing modes disagree with addresses")
        if fcf.pan_id_compression and (fcf.dest_addr_mode == 0 or fcf.src_addr_mode == 0):
            raise InvalidParameter("PAN ID compression needs both addresses")
        if (self.dest_pan_id is not None) != (fcf.dest_addr_mode != 0):
            raise InvalidParameter("destination PAN id present iff destination address present")
        want_src_pan = fcf.src_addr_mode != 0 and not fcf.pan_id_compression
        if (self.src_pan_id is not None) != want_src_pan:
            raise InvalidParameter("source PAN id presence does not match FCF")
        for pan in (self.dest_pan_id, self.src_pan_id):
            if pan is not None and not 0 <= pan <= 0xFFFF:
                raise InvalidParameter(f"PAN id {pan:#x} out of range")
        if not 0 <= self.seq <= 0xFF:
            raise InvalidParameter(f"sequence number {self.seq} out of range")


def _pack_addr(addr: MacAddress) -> bytes:
    if addr.mode == AddrMode.SHORT:
        return struct.pack("<H", addr.value)
    if addr.mode == AddrMode.EXTENDED:
        return struct.pack("<Q", addr.value)
    return b""


def encode_frame(frame: MacFrame) -> bytes:
    """Serialize ``frame`` to an MPDU with trailing little-endian FCS."""
    frame.validate()
    if frame.encoded_len() > MAX_MPDU:
        raise FrameTooLong(f"MPDU would be {frame.encoded_len()} bytes (max {MAX_MPDU})")
    out = bytearray(struct.pack("<HB", frame.fcf.to_int(), frame.seq))
    if frame.dest_pan_id is not None:
        out += struct.pack("<H", frame.dest_pan_id)
    out += _pack_addr(frame.dest)
    if frame.src_pan_id is not None:
        out += struct.pack("<H", frame.src_pan_id)
    out += _pack_addr(frame.src)
    out += frame.payload
    out += fcs_bytes(out)
    return bytes(out)


def decode_frame(data: bytes) -> MacFrame:
    """Parse an MPDU, verifying its FCS.

    The checksum is checked before any header field is trusted, so a
    corrupted frame always classifies as :class:`FcsMismatch`.
    """
    data = bytes(data)
    if len(data) < MIN_MPDU:
        raise Truncated(f"{len(data)} bytes is below the minimum MPDU")
    if len(data) > MAX_MPDU:
        raise FrameTooLong(f"{len(data)} byte MPDU")
    body, fcs = data[:-FCS_LEN], data[-FCS_LEN:]
    if fcs_bytes(body) != fcs:
        raise FcsMismatch(
            f"FCS {int.from_bytes(fcs, 'little'):#06x} != computed {compute_fcs(body):#06x}"
        )
    (raw_fcf, seq) = struct.unpack_from("<HB", body)
    fcf = FrameControl.from_int(raw_fcf)
    if fcf.pan_id_compression and (fcf.dest_addr_mode == 0 or fcf.src_addr_mode == 0):
        raise Unsupported("PAN ID compression without both addresses")

    pos = 3

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(body):
            raise Truncated(f"header needs {pos + n} bytes, frame has {len(body)}")
        chunk = body[pos:pos + n]
        pos += n
        return chunk

    def take_addr(mode: AddrMode) -> MacAddress:
        if mode == AddrMode.SHORT:
            return MacAddress(mode, int.from_bytes(take(2), "little"))
        if mode == AddrMode.EXTENDED:
            return MacAddress(mode, int.from_bytes(take(8), "little"))
        return NO_ADDRESS

    dest_pan = src_pan = None
    if fcf.dest_addr_mode:
        dest_pan = int.from_bytes(take(2), "little")
    dest = take_addr(fcf.dest_addr_mode)
    if fcf.src_addr_mode and not fcf.pan_id_compression:
        src_pan = int.from_bytes(take(2), "little")
    src = take_addr(fcf.src_addr_mode)
    return MacFrame(fcf, seq, dest_pan, dest, src_pan, src, body[pos:])


# --- MCPS-DATA ---------------------------------------------------------------

@dataclass(frozen=True)
class McpsDataRequest:
    dst_addr: MacAddress
    dst_pan_id: int
    msdu: bytes
    msdu_handle: int = 0
    src_addr_mode: AddrMode = AddrMode.SHORT
    ack_request: bool = False

    @property
    def dst_addr_mode(self) -> AddrMode:
        return self.dst_addr.mode


@dataclass(frozen=True)
class McpsDataConfirm:
    msdu_handle: int
    status: MacStatus
    timestamp: int


@dataclass(frozen=True)
class McpsDataIndication:
    src_addr: MacAddress
    src_pan_id: int | None
    dst_addr: MacAddress
    dst_pan_id: int | None
    msdu: bytes
    link_quality: int
    timestamp: int
    dsn: int = 0


def build_data_mpdu(req: McpsDataRequest, seq: int, src_pan_id: int,
                    src_addr: MacAddress) -> MacFrame:
    """Turn an MCPS-DATA.request into a Data frame ready for encoding."""
    if req.src_addr_mode != src_addr.mode:
        raise InvalidParameter(
            f"request asks for {AddrMode(req.src_addr_mode).name} source, "
            f"node address is {src_addr.mode.name}"
        )
    if req.dst_addr.mode == AddrMode.NONE and src_addr.mode == AddrMode.NONE:
        raise InvalidParameter("data frame needs at least one address")
    if not 0 <= req.msdu_handle <= 0xFF:
        raise InvalidParameter(f"msduHandle {req.msdu_handle} out of range")
    both = req.dst_addr.mode != AddrMode.NONE and src_addr.mode != AddrMode.NONE
    compress = both and req.dst_pan_id == src_pan_id
    fcf = FrameControl(
        frame_type=FrameType.DATA,
        ack_request=req.ack_request,
        pan_id_compression=compress,
        dest_addr_mode=req.dst_addr.mode,
        src_addr_mode=src_addr.mode,
    )
    frame = MacFrame(
        fcf=fcf,
        seq=seq & 0xFF,
        dest_pan_id=req.dst_pan_id if req.dst_addr.mode != AddrMode.NONE else None,
        dest=req.dst_addr,
        src_pan_id=src_pan_id if src_addr.mode != AddrMode.NONE and not compress else None,
        src=src_addr,
        payload=bytes(req.msdu),
    )
    frame.validate()
    if frame.encoded_len() > MAX_MPDU:
        raise FrameTooLong(f"msdu of {len(req.msdu)} bytes does not fit a {MAX_MPDU}-byte MPDU")
    return frame


def frame_to_indication(frame: MacFrame, lqi: int, t: int) -> McpsDataIndication:
    if frame.fcf.frame_type != FrameType.DATA:
        raise InvalidParameter(f"{frame.fcf.frame_type.name} frame is not MCPS data")
    src_pan = frame.src_pan_id
    if src_pan is None and frame.fcf.pan_id_compression:
        src_pan = frame.dest_pan_id
    return McpsDataIndication(
        src_addr=frame.src,
        src_pan_id=src_pan,
        dst_addr=frame.dest,
        dst_pan_id=frame.dest_pan_id,
        msdu=frame.payload,
        link_quality=lqi,
        timestamp=t,
        dsn=frame.seq,
    )


def describe(mpdu: bytes) -> dict:
    """Summary fields for capture listings; never raises."""
    info = {"len": len(mpdu), "type": "?", "src": "?", "dst": "?", "seq": None,
            "fcs_ok": False}
    if len(mpdu) >= MIN_MPDU:
        info["fcs_ok"] = fcs_bytes(mpdu[:-2]) == mpdu[-2:]
        # patch the FCS so a corrupt frame still shows its header
        try:
            frame = decode_frame(mpdu[:-2] + fcs_bytes(mpdu[:-2]))
        except CodecError:
            return info
        info.update(type=frame.fcf.frame_type.name.lower(), src=str(frame.src),
                    dst=str(frame.dest), seq=frame.seq)
    return info
