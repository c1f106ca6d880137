"""Classic libpcap capture format: file writer and incremental stream decoder.

Only the little-endian microsecond variant is produced or accepted.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

MAGIC = 0xA1B2C3D4
LINKTYPE_IEEE802_15_4_WITHFCS = 195
DEFAULT_SNAPLEN = 65535

_GLOBAL = struct.Struct("<IHHiIII")
_RECORD = struct.Struct("<IIII")
GLOBAL_HEADER_LEN = _GLOBAL.size
RECORD_HEADER_LEN = _RECORD.size


class PcapError(ValueError):
    pass


class BadMagic(PcapError):
    pass


class WrongLinktype(PcapError):
    pass


class Truncated(PcapError):
    pass


class Oversize(PcapError):
    pass


class BadRecord(PcapError):
    pass


@dataclass(frozen=True)
class PcapGlobalHeader:
    magic: int = MAGIC
    version_major: int = 2
    version_minor: int = 4
    thiszone: int = 0
    sigfigs: int = 0
    snaplen: int = DEFAULT_SNAPLEN
    linktype: int = LINKTYPE_IEEE802_15_4_WITHFCS

    def encode(self) -> bytes:
        return _GLOBAL.pack(self.magic, self.version_major, self.version_minor,
                            self.thiszone, self.sigfigs, self.snaplen, self.linktype)

    @classmethod
    def decode(cls, data: bytes) -> PcapGlobalHeader:
        if len(data) < GLOBAL_HEADER_LEN:
            raise Truncated(f"global header needs 24 bytes, got {len(data)}")
        magic = struct.unpack_from("<I", data)[0]
        if magic != MAGIC:
            raise BadMagic(f"magic {data[:4].hex()} is not little-endian microsecond pcap")
        hdr = cls(*_GLOBAL.unpack_from(data))
        if hdr.linktype != LINKTYPE_IEEE802_15_4_WITHFCS:
            raise WrongLinktype(f"linktype {hdr.linktype}, expected "
                                f"{LINKTYPE_IEEE802_15_4_WITHFCS}")
        return hdr


def encode_global_header(h: PcapGlobalHeader | None = None) -> bytes:
    return (h or PcapGlobalHeader()).encode()


@dataclass(frozen=True)
class PcapRecord:
    ts_sec: int
    ts_usec: int
    captured_len: int
    original_len: int
    data: bytes

    @property
    def time_us(self) -> int:
        return self.ts_sec * 1_000_000 + self.ts_usec

    @classmethod
    def at(cls, t_us: int, data: bytes) -> PcapRecord:
        sec, usec = divmod(t_us, 1_000_000)
        return cls(sec, usec, len(data), len(data), bytes(data))

    def encode(self) -> bytes:
        return _RECORD.pack(self.ts_sec, self.ts_usec, self.captured_len,
                            self.original_len) + self.data


def encode_record(t_us: int, data: bytes, snaplen: int = DEFAULT_SNAPLEN) -> bytes:
    """Record header plus ``data``; ``t_us`` is simulation time in µs."""
    if len(data) > snaplen:
        raise Oversize(f"{len(data)} bytes exceeds snaplen {snaplen}")
    if t_us < 0 or t_us // 1_000_000 > 0xFFFFFFFF:
        raise Oversize(f"timestamp {t_us} us not representable")
    return PcapRecord.at(t_us, data).encode()


def decode_record(data: bytes, snaplen: int = DEFAULT_SNAPLEN) -> PcapRecord:
    """Decode exactly one record occupying all of ``data``."""
    if len(data) < RECORD_HEADER_LEN:
        raise Truncated(f"record header needs 16 bytes, got {len(data)}")
    sec, usec, caplen, origlen = _RECORD.unpack_from(data)
    body = data[RECORD_HEADER_LEN:]
    _check_record(usec, caplen, origlen, snaplen)
    if caplen != len(body):
        raise BadRecord(f"capturedLen {caplen} but {len(body)} data bytes follow")
    return PcapRecord(sec, usec, caplen, origlen, bytes(body))


def _check_record(usec: int, caplen: int, origlen: int, snaplen: int) -> None:
    if usec >= 1_000_000:
        raise BadRecord(f"tsUsec {usec} out of range")
    if caplen > snaplen:
        raise Oversize(f"capturedLen {caplen} exceeds snaplen {snaplen}")
    if caplen > origlen:
        raise BadRecord(f"capturedLen {caplen} > originalLen {origlen}")


class PcapStreamDecoder:
    """Incremental decoder for a pcap byte stream (global header first).

    Buffered data never exceeds one record header plus ``snaplen`` bytes.
    Once a fatal error is raised the decoder stays failed.
    """

    def __init__(self, expect_header: bool = True):
        self.header: PcapGlobalHeader | None = None if expect_header else PcapGlobalHeader()
        self._buf = bytearray()
        self._failed: PcapError | None = None

    @property
    def snaplen(self) -> int:
        return self.header.snaplen if self.header else DEFAULT_SNAPLEN

    @property
    def pending(self) -> int:
        return len(self._buf)

    def feed(self, chunk: bytes) -> list[PcapRecord]:
        if self._failed:
            raise self._failed
        self._buf += chunk
        try:
            return self._drain()
        except PcapError as e:
            self._failed = e
            self._buf.clear()
            raise

    def _drain(self) -> list[PcapRecord]:
        out = []
        if self.header is None:
            if len(self._buf) >= 4 and struct.unpack_from("<I", self._buf)[0] != MAGIC:
                raise BadMagic(f"magic {bytes(self._buf[:4]).hex()}")
            if len(self._buf) < GLOBAL_HEADER_LEN:
                return out
            self.header = PcapGlobalHeader.decode(bytes(self._buf[:GLOBAL_HEADER_LEN]))
            del self._buf[:GLOBAL_HEADER_LEN]
        pos = 0
        while len(self._buf) - pos >= RECORD_HEADER_LEN:
            sec, usec, caplen, origlen = _RECORD.unpack_from(self._buf, pos)
            _check_record(usec, caplen, origlen, self.snaplen)
            end = pos + RECORD_HEADER_LEN + caplen
            if len(self._buf) < end:
                break
            out.append(PcapRecord(sec, usec, caplen, origlen,
                                  bytes(self._buf[pos + RECORD_HEADER_LEN:end])))
            pos = end
        del self._buf[:pos]
        return out

    def close(self) -> None:
        """Signal end of stream; leftover bytes mean the stream was cut."""
        if self._failed:
            raise self._failed
        if self.header is None:
            raise Truncated("stream ended before the global header")
        if self._buf:
            raise Truncated(f"stream ended inside a record ({len(self._buf)} bytes pending)")


class PcapWriter:
    """Append-only capture file writer (linktype 195 by default)."""

    def __init__(self, path, header: PcapGlobalHeader | None = None):
        self.path = os.fspath(path)
        self.header = header or PcapGlobalHeader()
        self.count = 0
        self._last_us = -1
        parent = os.path.dirname(self.path)
        try:
            if parent:
                os.makedirs(parent, exist_ok=True)
            self._fh = open(self.path, "wb")
            self._fh.write(self.header.encode())
        except OSError as e:
            raise OSError(e.errno, f"cannot open capture {self.path}: {e.strerror}") from e

    def append(self, t_us: int, data: bytes) -> None:
        if t_us < self._last_us:
            raise ValueError(f"{self.path}: record at {t_us} us precedes {self._last_us} us")
        self._fh.write(encode_record(t_us, data, self.header.snaplen))
        self._last_us = t_us
        self.count += 1

    def flush(self) -> None:
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        if not self._fh.closed:
            self.flush()
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_pcap(path) -> tuple[PcapGlobalHeader, list[PcapRecord]]:
    with open(path, "rb") as fh:
        data = fh.read()
    dec = PcapStreamDecoder()
    records = dec.feed(data)
    dec.close()
    return dec.header, records
