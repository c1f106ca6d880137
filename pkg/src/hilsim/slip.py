"""RFC 1055 SLIP framing for the virtual node serial channels."""

from __future__ import annotations

import enum

END = 0xC0
ESC = 0xDB
ESC_END = 0xDC
ESC_ESC = 0xDD

DEFAULT_MAX_FRAME = 256


class SlipError(ValueError):
    pass


class ProtocolError(SlipError):
    """ESC followed by something other than ESC_END / ESC_ESC."""


class Overflow(SlipError):
    pass


def slip_encode(payload: bytes) -> bytes:
    out = bytearray([END])
    for b in payload:
        if b == END:
            out += bytes((ESC, ESC_END))
        elif b == ESC:
            out += bytes((ESC, ESC_ESC))
        else:
            out.append(b)
    out.append(END)
    return bytes(out)


class Phase(enum.Enum):
    IDLE = "idle"
    IN_FRAME = "in_frame"
    AFTER_ESCAPE = "after_escape"


class SlipDecoder:
    """Streaming SLIP decoder.

    ``feed`` returns the payloads completed by the chunk. Errors do not
    interrupt the stream: the broken frame is discarded, the error is
    appended to ``errors`` and decoding resumes at the next END.
    """

    def __init__(self, max_frame: int = DEFAULT_MAX_FRAME):
        self.max_frame = max_frame
        self.phase = Phase.IDLE
        self.buffer = bytearray()
        self.discarding = False
        self.errors: list[SlipError] = []
        self.error_count = 0

    def _fail(self, err: SlipError) -> None:
        self.errors.append(err)
        self.error_count += 1
        if len(self.errors) > 64:
            del self.errors[:-64]
        self.buffer.clear()
        self.phase = Phase.IDLE
        self.discarding = True

    def feed(self, chunk: bytes) -> list[bytes]:
        frames = []
        for b in chunk:
            if b == END:
                if self.phase == Phase.AFTER_ESCAPE:
                    self._fail(ProtocolError("frame ended inside an escape sequence"))
                elif self.buffer and not self.discarding:
                    frames.append(bytes(self.buffer))
                self.buffer.clear()
                self.phase = Phase.IDLE
                self.discarding = False
                continue
            if self.discarding:
                continue
            if self.phase == Phase.AFTER_ESCAPE:
                if b == ESC_END:
                    b = END
                elif b == ESC_ESC:
                    b = ESC
                else:
                    self._fail(ProtocolError(f"invalid escape 0xDB 0x{b:02X}"))
                    continue
                self.phase = Phase.IN_FRAME
            elif b == ESC:
                self.phase = Phase.AFTER_ESCAPE
                continue
            else:
                self.phase = Phase.IN_FRAME
            if len(self.buffer) >= self.max_frame:
                self._fail(Overflow(f"frame exceeds {self.max_frame} bytes"))
                continue
            self.buffer.append(b)
        return frames

    def take_errors(self) -> list[SlipError]:
        errs, self.errors = self.errors, []
        return errs
