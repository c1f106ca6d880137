"""Shared oracles and strategies for the test suite."""

from hypothesis import strategies as st

from hilsim import mac


def crc16_bitwise(data: bytes) -> int:
    """Bit-at-a-time CRC over a reflected register; independent of the table code."""
    crc = 0x0000
    for byte in data:
        for i in range(8):
            if ((crc ^ (byte >> i)) & 1):
                crc = (crc >> 1) ^ 0x8408
            else:
                crc >>= 1
    return crc


def _addr(mode):
    if mode == mac.AddrMode.SHORT:
        return st.integers(0, 0xFFFF).map(mac.MacAddress.short)
    if mode == mac.AddrMode.EXTENDED:
        return st.integers(0, 2**64 - 1).map(mac.MacAddress.extended)
    return st.just(mac.NO_ADDRESS)


@st.composite
def mac_frames(draw):
    modes = [mac.AddrMode.NONE, mac.AddrMode.SHORT, mac.AddrMode.EXTENDED]
    ftype = draw(st.sampled_from(list(mac.FrameType)))
    dmode = draw(st.sampled_from(modes))
    smode = draw(st.sampled_from(modes))
    compress = bool(dmode and smode) and draw(st.booleans())
    fcf = mac.FrameControl(
        frame_type=ftype,
        frame_pending=draw(st.booleans()),
        ack_request=draw(st.booleans()),
        pan_id_compression=compress,
        dest_addr_mode=dmode,
        frame_version=draw(st.sampled_from([0, 1])),
        src_addr_mode=smode,
    )
    pan = st.integers(0, 0xFFFF)
    dest_pan = draw(pan) if dmode else None
    src_pan = draw(pan) if smode and not compress else None
    frame = mac.MacFrame(fcf, draw(st.integers(0, 255)), dest_pan, draw(_addr(dmode)),
                         src_pan, draw(_addr(smode)), b"")
    room = mac.MAX_MPDU - frame.encoded_len()
    payload = draw(st.binary(max_size=room))
    return mac.MacFrame(fcf, frame.seq, dest_pan, frame.dest, src_pan, frame.src, payload)


def data_frame(seq=0, src=1, dst=2, payload=b"hello", pan=0x22):
    return mac.encode_frame(mac.MacFrame(
        mac.FrameControl(pan_id_compression=True, dest_addr_mode=mac.AddrMode.SHORT,
                         src_addr_mode=mac.AddrMode.SHORT),
        seq, pan, mac.MacAddress.short(dst), None, mac.MacAddress.short(src), payload))
