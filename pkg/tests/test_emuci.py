import pytest
from hypothesis import given, settings, strategies as st

from hilsim import emuci, mac, pcap
from hilsim.backend import World
from hilsim.client import EmuciClient, LoopbackTransport, NackError, VersionMismatch
from hilsim.emuci import Message, MsgType, NackCode
from hilsim.server import EmulationServer, SessionState
from hilsim.slip import slip_encode
from support import data_frame


def test_hello_bytes():
    assert emuci.encode_message(Message(MsgType.HELLO, 1)) == bytes.fromhex("000000020101")


def test_decoder_bytewise():
    dec = emuci.MessageDecoder()
    out = []
    for b in bytes.fromhex("000000020101"):
        out += dec.feed(bytes([b]))
    assert out == [Message(MsgType.HELLO, 1, b"")]


def test_decoder_rejects_huge_length_before_buffering():
    dec = emuci.MessageDecoder()
    with pytest.raises(emuci.FrameTooLarge):
        dec.feed(b"\xff\xff\xff\xff")
    assert dec.pending == 0 and dec.dead
    with pytest.raises(emuci.FramingError):
        dec.feed(b"")


def test_decoder_rejects_short_length():
    with pytest.raises(emuci.FramingError):
        emuci.MessageDecoder().feed(b"\x00\x00\x00\x01\x01")


def test_decoder_truncated_at_close():
    dec = emuci.MessageDecoder()
    dec.feed(b"\x00\x00\x00\x05\x01")
    with pytest.raises(emuci.Truncated):
        dec.close()


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 255), st.integers(0, 255), st.binary(max_size=40)),
                max_size=10), st.data())
def test_stream_chunk_invariance(msgs, data):
    msgs = [Message(*m) for m in msgs]
    stream = b"".join(map(emuci.encode_message, msgs))
    cuts = sorted(data.draw(st.lists(st.integers(0, len(stream)), max_size=8)))
    dec = emuci.MessageDecoder()
    out, prev = [], 0
    for c in cuts + [len(stream)]:
        out += dec.feed(stream[prev:c])
        prev = c
    dec.close()
    assert out == msgs


def test_payload_layouts_round_trip():
    script = ((100, b"\x01\x02\x03\x04\x05"), (200, b"abcdef"))
    reg = emuci.pack_register(3, 0x0303, 0x22, -5, -90, "scripted", 192, script)
    assert emuci.unpack_register(reg) == dict(
        node_id=3, short_addr=0x0303, pan_id=0x22, tx_power_dbm=-5, sensitivity_dbm=-90,
        behavior="scripted", turnaround_us=192, script=script)
    assert emuci.unpack_attenuation(emuci.pack_attenuation(1, 2, 160)) == (1, 2, 160)
    assert emuci.pack_attenuation(1, 2, 160) == bytes.fromhex("0001000200a0")
    assert emuci.unpack_interference(emuci.pack_interference(3, -7, 10**12, 5)) == (
        3, -7, 10**12, 5)
    assert emuci.unpack_advance(emuci.pack_advance(10**6)) == (10**6, 0)
    assert emuci.unpack_advance(emuci.pack_advance(10**6, 1)) == (10**6, 1)
    assert emuci.unpack_subscribe(emuci.pack_subscribe()) is None
    assert emuci.unpack_subscribe(emuci.pack_subscribe([1, 5])) == {1, 5}
    assert emuci.unpack_nack(emuci.pack_nack(NackCode.SELF_LINK, "x")) == (5, "x")


@pytest.mark.parametrize("fn, data", [
    (emuci.unpack_attenuation, b"\x00"),
    (emuci.unpack_register, b"\x00" * 5),
    (emuci.unpack_register, emuci.pack_register(1, 1, 1) + b"\x00\x01\x00"),
    (emuci.unpack_subscribe, b"\x02"),
    (emuci.unpack_stats, b"\x00\x02"),
    (emuci.unpack_nack, b""),
])
def test_malformed_payloads(fn, data):
    with pytest.raises(emuci.MalformedPayload):
        fn(data)


# --- sessions ------------------------------------------------------------------

class RawSession:
    """Drive a server session with raw messages and collect replies."""

    def __init__(self, server):
        self.session = server.open_session()
        self.dec = emuci.MessageDecoder()

    def send(self, mtype, seq, payload=b""):
        self.session.receive(emuci.encode_message(Message(mtype, seq, payload)))
        return self.dec.feed(self.session.take_output())


@pytest.fixture
def server():
    return EmulationServer(World())


def client_for(server, record=True):
    return EmuciClient(LoopbackTransport(server), record=record)


def test_handshake(server):
    raw = RawSession(server)
    (r,) = raw.send(MsgType.HELLO, 1, b"\x01")
    assert (r.type, r.seq, r.payload) == (MsgType.ACK, 1, b"\x01")
    assert raw.session.state == SessionState.READY


def test_version_mismatch_closes(server):
    c = client_for(server)
    with pytest.raises(VersionMismatch) as e:
        c.hello(version=2)
    assert e.value.code == NackCode.VERSION_MISMATCH
    assert c.transport.session.closed


def test_not_ready_gate(server):
    raw = RawSession(server)
    (r,) = raw.send(MsgType.INJECT_FRAME, 3, emuci.pack_node_record(1, b""))
    assert r.type == MsgType.NACK and emuci.unpack_nack(r.payload)[0] == NackCode.NOT_READY


def test_unknown_command_keeps_session(server):
    raw = RawSession(server)
    raw.send(MsgType.HELLO, 1, b"\x01")
    (r,) = raw.send(0x42, 2)
    assert r.type == MsgType.NACK and r.seq == 2
    assert emuci.unpack_nack(r.payload)[0] == NackCode.UNKNOWN_COMMAND
    (r,) = raw.send(MsgType.GET_STATS, 3)
    assert r.type == MsgType.STATS


def test_framing_error_closes(server):
    raw = RawSession(server)
    raw.session.receive(b"\xff\xff\xff\xff")
    assert raw.session.closed


def test_nack_codes(server):
    c = client_for(server)
    c.hello()
    c.register_node(1)
    c.register_node(2)
    cases = [
        (lambda: c.register_node(1), NackCode.DUPLICATE_NODE),
        (lambda: c.inject_frame(999, pcap.encode_record(0, data_frame())), NackCode.UNKNOWN_NODE),
        (lambda: c.set_attenuation(1, 1, 0), NackCode.SELF_LINK),
        (lambda: c.set_attenuation(1, 9, 0), NackCode.UNKNOWN_NODE),
        (lambda: c.inject_frame(1, b"\x00" * 5), NackCode.MALFORMED_PAYLOAD),
        (lambda: c.inject_frame(1, pcap.encode_record(0, b"abc")), NackCode.INVALID_PARAMETER),
        (lambda: c.subscribe_frames([7]), NackCode.UNKNOWN_NODE),
    ]
    for call, code in cases:
        with pytest.raises(NackError) as e:
            call()
        assert e.value.code == code
    c.advance_time(1000)
    with pytest.raises(NackError) as e:
        c.advance_time(999)
    assert e.value.code == NackCode.TIME_IN_PAST
    with pytest.raises(NackError) as e:
        c.inject_interference(1, 0, 10, 10)
    assert e.value.code == NackCode.TIME_IN_PAST
    c.inject_interference(1, 0, 1000, 0)


def test_advance_empty_world(server):
    c = client_for(server)
    c.hello()
    assert c.advance_time(10**6) == 10**6
    assert not c.inbox


def test_stats_zero_then_airtime(server):
    c = client_for(server)
    c.hello()
    c.register_node(1)
    c.register_node(2)
    assert all(v == 0 for s in c.get_stats().values() for v in s.values())
    ack = mac.encode_frame(mac.MacFrame(mac.FrameControl(frame_type=mac.FrameType.ACK),
                                        seq=1, payload=bytes(6)))
    assert len(ack) == 11
    c.inject_frame(1, pcap.encode_record(0, ack))
    c.advance_time(10_000)
    assert c.get_stats()[1]["tx_airtime_us"] == 544


def test_inject_reaches_serial_line(server):
    c = client_for(server)
    c.hello()
    c.register_node(1)
    frame = data_frame()
    c.advance_time(100)
    c.inject_frame(1, pcap.encode_record(200, frame))
    # still on the serial line, SLIP framed, until the world reaches t=200
    assert bytes(server.world.node(1).serial.down) == slip_encode(frame)
    c.advance_time(200)
    assert server.world.log[-1].mpdu == frame
    assert server.world.log[-1].time_us == 200


def test_frame_in_flight_indications(server):
    c = client_for(server)
    c.hello()
    c.register_node(1)
    c.register_node(2)
    c.subscribe_frames()
    frame = data_frame(payload=bytes(20))
    start = 500_000 - mac.airtime(len(frame))
    c.advance_time(start)
    c.inject_frame(1, pcap.encode_record(start, frame))
    assert c.advance_time(10**6) == 10**6
    got = [(nid, r.time_us, r.data) for nid, r in c.inbox]
    assert got == [(1, 500_000, frame), (2, 500_000, frame)]
    msgs = [m for d, m in c.trace if d == "in"]
    assert msgs[-1].type == MsgType.TIME_GRANT
    assert msgs[-2].type == MsgType.FRAME_INDICATION and msgs[-2].seq == 0


def test_stop_on_indication(server):
    c = client_for(server)
    c.hello()
    c.register_node(1)
    c.register_node(2)
    c.subscribe_frames([2])
    frame = data_frame()
    c.inject_frame(1, pcap.encode_record(0, frame))
    reached = c.advance_time(10**6, stop_on_indication=True)
    assert reached == mac.airtime(len(frame))
    assert [nid for nid, _ in c.inbox] == [2]


def test_isolation_sentinel(server):
    c = client_for(server)
    c.hello()
    c.register_node(1)
    c.register_node(2)
    c.set_attenuation(1, 2, 0xFFFF)
    c.subscribe_frames([2])
    for t in (10, 5000, 10_000):
        c.advance_time(t)
        c.inject_frame(1, pcap.encode_record(t, data_frame()))
    c.advance_time(10**6)
    assert not c.inbox
    assert c.get_stats()[2]["frames_rx"] == 0


def test_seq_wraps_skipping_zero(server):
    c = client_for(server)
    c.hello()
    seqs = set()
    for _ in range(600):
        c.get_stats()
        seqs.add(c.trace[-2][1].seq)
    assert seqs == set(range(1, 256))


def test_two_sessions_fan_out(server):
    a, b = client_for(server), client_for(server)
    a.hello()
    a.register_node(1)
    a.register_node(2)
    b.hello()
    b.subscribe_frames([2])
    a.inject_frame(1, pcap.encode_record(0, data_frame()))
    a.advance_time(10_000)
    b.get_stats()
    assert [nid for nid, _ in b.inbox] == [2]
    assert not a.inbox


def test_hello_resets_world(server):
    c = client_for(server)
    c.hello()
    c.register_node(1)
    c.close()
    c2 = client_for(server)
    c2.hello()
    c2.register_node(1)


def test_protocol_determinism():
    def replay():
        srv = EmulationServer(World())
        raw = RawSession(srv)
        out = []
        for mtype, payload in [
            (MsgType.HELLO, b"\x01"),
            (MsgType.REGISTER_NODE, emuci.pack_register(1, 1, 0x22)),
            (MsgType.REGISTER_NODE, emuci.pack_register(2, 2, 0x22, behavior="echo")),
            (MsgType.SUBSCRIBE_FRAMES, emuci.pack_subscribe()),
            (MsgType.INJECT_FRAME, emuci.pack_node_record(1, pcap.encode_record(5, data_frame()))),
            (MsgType.ADVANCE_TIME, emuci.pack_advance(50_000)),
            (MsgType.GET_STATS, b""),
        ]:
            raw.session.receive(emuci.encode_message(Message(mtype, len(out) + 1, payload)))
            out.append(raw.session.take_output())
        return b"".join(out)

    first = replay()
    assert first == replay()
    assert first.count(b"\xc0\x00") >= 4


@settings(max_examples=50)
@given(st.binary(max_size=400))
def test_garbage_never_crashes_session(noise):
    srv = EmulationServer(World())
    s = srv.open_session()
    s.receive(b"\x00\x00\x00\x03\x01\x01\x01")
    s.receive(noise)
    out = s.take_output()
    for m in emuci.MessageDecoder().feed(out):
        assert m.type in (MsgType.ACK, MsgType.NACK, MsgType.TIME_GRANT, MsgType.STATS,
                          MsgType.FRAME_INDICATION)


def test_hexdump_readable():
    line = emuci.hexdump(Message(MsgType.HELLO, 1, b"\x01"))
    assert line.startswith("HELLO") and "00 00 00 03 01 01 01" in line
