"""Built-in codec vectors run by ``hilsim codec-check``."""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass

from . import mac, pcap, slip


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str = ""


def crc16_bitwise(data: bytes) -> int:
    """Reference CRC: one bit at a time, reflected poly 0x8408, init 0."""
    crc = 0
    for byte in data:
        for i in range(8):
            bit = (byte >> i) & 1
            if (crc ^ bit) & 1:
                crc = (crc >> 1) ^ 0x8408
            else:
                crc >>= 1
    return crc


def slip_reference(payload: bytes) -> bytes:
    """Transcription of the RFC 1055 ``send_packet`` loop."""
    out = [0xC0]
    for c in payload:
        if c == 0xC0:
            out += [0xDB, 0xDC]
        elif c == 0xDB:
            out += [0xDB, 0xDD]
        else:
            out.append(c)
    out.append(0xC0)
    return bytes(out)


def _checks():
    yield "crc check value", mac.compute_fcs(b"123456789") == 0x2189
    yield "crc matches bitwise", all(
        mac.compute_fcs(v) == crc16_bitwise(v)
        for v in (b"", b"\x00", b"\xff" * 7, bytes(range(256)), b"123456789"))
    yield "crc residue", mac.compute_fcs(b"123456789" + mac.fcs_bytes(b"123456789")) == 0

    yield "slip empty", slip.slip_encode(b"") == b"\xc0\xc0"
    yield "slip escape END", slip.slip_encode(b"\x01\xc0\x02") == bytes.fromhex("c001dbdc02c0")
    yield "slip escape ESC", slip.slip_encode(b"\xdb") == bytes.fromhex("c0dbddc0")
    yield "slip reference", all(slip.slip_encode(p) == slip_reference(p)
                                for p in (bytes(range(256)), b"\xc0\xdb\xc0\xdb"))
    dec = slip.SlipDecoder()
    yield "slip decode", dec.feed(bytes.fromhex("c001dbdc02c0")) == [b"\x01\xc0\x02"]
    dec = slip.SlipDecoder()
    got = dec.feed(bytes.fromhex("c0db41") + slip.slip_encode(b"ok"))
    yield "slip resync", got == [b"ok"] and dec.error_count == 1

    golden = bytes.fromhex("d4c3b2a1020004000000000000000000ffff0000c3000000")
    yield "pcap global header", pcap.encode_global_header() == golden
    rec = pcap.encode_record(1_000_352, bytes(11))
    yield "pcap record header", rec[:16] == struct.pack("<IIII", 1, 352, 11, 11)

    fcf = mac.FrameControl(frame_type=mac.FrameType.DATA, pan_id_compression=True,
                           dest_addr_mode=mac.AddrMode.SHORT,
                           src_addr_mode=mac.AddrMode.SHORT)
    yield "fcf data short/short", fcf.to_int() == 0x8841
    yield "fcf ack", mac.FrameControl(frame_type=mac.FrameType.ACK).to_int() == 0x0002
    yield "fcf decode", mac.FrameControl.from_int(0x8841) == fcf
    frame = mac.MacFrame(fcf, 1, 0x22, mac.MacAddress.short(2), None,
                         mac.MacAddress.short(1), b"")
    enc = mac.encode_frame(frame)
    yield "frame layout", enc[:9] == bytes.fromhex("41880122000200" "0100")
    yield "frame round-trip", mac.decode_frame(enc) == frame
    yield "airtime", (mac.airtime(5), mac.airtime(11), mac.airtime(127)) == (352, 544, 4256)


def run_codec_check() -> tuple[list[CheckResult], float]:
    t0 = time.perf_counter()
    results = []
    for name, ok in _checks():
        results.append(CheckResult(name, bool(ok)))
    return results, time.perf_counter() - t0
