import pytest
from hypothesis import given, settings, strategies as st

from hilsim import mac
from hilsim.backend import (ISOLATION, Behavior, DuplicateNode, InvalidFrame, JamMode,
                            NodeConfig, Outcome, Overload, SelfLink, TimeInPast, UnknownNode,
                            World, WorldConfig)
from hilsim.slip import slip_encode
from support import data_frame


def world(*nodes, **kw):
    nodes = nodes or (NodeConfig(1), NodeConfig(2))
    return World(WorldConfig(nodes=list(nodes), **kw))


def send(w, src, dst, t=None, payload=b"hello"):
    """Transmit and run the world until the frame has ended."""
    w.transmit(src, data_frame(src=src, dst=dst, payload=payload), t)
    w.run_until_idle()
    return w.log[-1]


def test_defaults_delivered():
    tx = send(world(), 1, 2)
    assert tx.outcomes == {2: Outcome.DELIVERED}
    assert tx.rx_qdb[2] == -160


def test_isolation():
    w = world()
    w.set_attenuation(1, 2, ISOLATION)
    w.run_until(1)
    assert send(w, 1, 2).outcomes[2] == Outcome.ISOLATED
    assert w.account()[2].frames_dropped == 0


def test_attenuation_takes_effect_after_now():
    w = world()
    w.set_attenuation(1, 2, 400)
    assert w.attenuation(1, 2) == 160
    assert w.attenuation(1, 2, 1) == 400
    assert w.transmit(1, data_frame(), 0)[2] == Outcome.DELIVERED
    w.run_until_idle()
    assert send(w, 1, 2).outcomes[2] == Outcome.BELOW_SENSITIVITY


def test_attenuation_history_is_per_time():
    w = world()
    w.run_until(100)
    w.set_attenuation(1, 2, 200)
    w.run_until(200)
    w.set_attenuation(1, 2, 300)
    assert [w.attenuation(1, 2, t) for t in (0, 100, 101, 200, 201)] == [160, 160, 200, 200, 300]


@pytest.mark.parametrize("q, outcome", [(340, Outcome.DELIVERED),
                                        (341, Outcome.BELOW_SENSITIVITY)])
def test_budget_threshold(q, outcome):
    assert send(world(links={(1, 2): q}), 1, 2).outcomes[2] == outcome


def test_sir_example_hand_derived():
    # rx = 0 - 40 = -40 dBm, interferer 0 dBm seen through 30 dB = -30 dBm: SIR -10 < 3
    def outcome(t):
        w = world(NodeConfig(1), NodeConfig(2), NodeConfig(3),
                  links={(1, 2): 160, (3, 2): 120})
        w.add_interference(3, 0, 10_000, 5_000)
        return send(w, 1, 2, t=t).outcomes[2]
    assert outcome(0) == Outcome.DELIVERED
    assert outcome(10_000) == Outcome.JAMMED
    assert outcome(14_999) == Outcome.JAMMED
    assert outcome(15_000) == Outcome.DELIVERED


def test_sir_threshold_boundary():
    # SIR exactly 3 dB passes, 2.75 dB fails
    def outcome(att_interferer):
        w = world(NodeConfig(1), NodeConfig(2), NodeConfig(3),
                  links={(1, 2): 160, (3, 2): att_interferer})
        w.add_interference(3, 0, 0, 10_000)
        return send(w, 1, 2, t=0).outcomes[2]
    assert outcome(172) == Outcome.DELIVERED
    assert outcome(171) == Outcome.JAMMED


def test_colocated_interferer():
    w = world(NodeConfig(1), NodeConfig(2), links={(1, 2): 0})
    w.add_interference(2, -10, 0, 10_000)
    # rx 0 dBm vs co-located -10 dBm: SIR 10 dB
    assert send(w, 1, 2, t=0).outcomes[2] == Outcome.DELIVERED


def test_interference_window_edges():
    dur = mac.airtime(len(data_frame()))

    def outcome(t, start, length):
        w = world(NodeConfig(1), NodeConfig(2), NodeConfig(3), links={(3, 2): 0})
        w.add_interference(3, 0, start, length)
        return send(w, 1, 2, t=t).outcomes[2]
    assert outcome(1000, 1000, 0) == Outcome.DELIVERED
    assert outcome(5000, 5000 + dur, 100) == Outcome.DELIVERED
    assert outcome(5001, 5000 + dur, 100) == Outcome.JAMMED
    assert outcome(5000, 4000, 1000) == Outcome.DELIVERED
    assert outcome(5000, 4000, 1001) == Outcome.JAMMED


def test_concurrent_transmissions_collide():
    w = world(NodeConfig(1), NodeConfig(2), NodeConfig(3))
    w.transmit(1, data_frame(src=1), 0)
    w.transmit(3, data_frame(src=3), 100)
    w.run_until_idle()
    assert w.log[0].outcomes[2] == Outcome.JAMMED
    assert w.log[1].outcomes[2] == Outcome.JAMMED


def test_corrupt_mode_flips_last_payload_byte():
    w = world(NodeConfig(1), NodeConfig(2), NodeConfig(3), links={(3, 2): 0},
              jam_mode=JamMode.CORRUPT)
    w.add_interference(3, 0, 0, 10_000)
    frame = data_frame(payload=b"abc")
    w.transmit(1, frame, 0)
    w.run_until_idle()
    rx = [c for c in w.captures if c.point == "rx" and c.node_id == 2]
    assert rx[0].data[:-3] == frame[:-3]
    assert rx[0].data[-3] == frame[-3] ^ 0xFF
    with pytest.raises(mac.FcsMismatch):
        mac.decode_frame(rx[0].data)


def test_capture_points_and_times():
    w = world()
    frame = data_frame()
    w.transmit(1, frame, 100)
    w.run_until_idle()
    end = 100 + mac.airtime(len(frame))
    assert [(c.time_us, c.node_id, c.point, c.data) for c in w.captures] == [
        (end, 1, "tx", frame), (end, 2, "rx", frame)]


def test_echo_behavior():
    w = world(NodeConfig(1), NodeConfig(2, behavior=Behavior.ECHO, turnaround_us=50))
    frame = data_frame(src=1, dst=2, payload=b"ping!")
    w.inject(1, frame, 0)
    w.run_until_idle()
    assert len(w.log) == 2
    reply = mac.decode_frame(w.log[1].mpdu)
    assert (reply.src.value, reply.dest.value, reply.payload, reply.seq) == (2, 1, b"ping!", 0)
    assert w.log[1].time_us == 2 * 0 + mac.airtime(len(frame)) + 50


def test_echo_ignores_frames_for_others_and_bad_fcs():
    w = world(NodeConfig(1), NodeConfig(2, behavior=Behavior.ECHO))
    w.inject(1, data_frame(dst=7), 0)
    bad = bytearray(data_frame(dst=2))
    bad[-1] ^= 1
    w.inject(1, bytes(bad), 0)
    w.run_until_idle()
    assert len(w.log) == 2
    assert w.account()[2].fcs_errors == 1


def test_sink_counts():
    w = world(NodeConfig(1), NodeConfig(2))
    for t in (0, 1000, 2000):
        w.inject(1, data_frame(), t)
    w.run_until_idle()
    s = w.account()
    assert s[2].frames_rx == 3 and s[2].frames_tx == 0 and s[2].frames_handled == 3


def test_scripted_behavior():
    script = ((100, data_frame(src=3, dst=1)), (5000, data_frame(src=3, dst=2)))
    w = world(NodeConfig(1), NodeConfig(2), NodeConfig(3, behavior=Behavior.SCRIPTED,
                                                        script=script))
    w.run_until_idle()
    assert [(t.time_us, t.from_node) for t in w.log] == [(100, 3), (5000, 3)]


def test_serial_garbage_counts_error_and_node_keeps_working():
    w = world()
    w.write_serial(1, b"\xc0\xdb\x41\xc0")
    w.run_until(0)
    assert w.account()[1].serial_errors == 1
    w.inject(1, data_frame(), 0)
    w.run_until_idle()
    assert w.account()[2].frames_rx == 1


def test_slip_leg_transparency():
    w = world()
    frame = data_frame(payload=b"\xc0\xdb\xc0")
    w.inject(1, frame, 0)
    w.run_until_idle()
    assert w.log[0].mpdu == frame
    assert slip_encode(frame).count(b"\xdb") == 4


def test_radio_busy_chains_transmissions():
    w = world()
    frame = data_frame()
    for _ in range(3):
        w.inject(1, frame, 0)
    w.run_until_idle()
    d = mac.airtime(len(frame))
    assert [t.time_us for t in w.log] == [0, d, 2 * d]
    assert all(t.outcomes[2] == Outcome.DELIVERED for t in w.log)


def test_backlog_overload():
    w = world(max_backlog=2)
    w.inject(1, data_frame(), 0)
    w.inject(1, data_frame(), 0)
    with pytest.raises(Overload):
        w.inject(1, data_frame(), 0)


def test_errors():
    w = world()
    with pytest.raises(UnknownNode):
        w.transmit(9, data_frame())
    with pytest.raises(InvalidFrame):
        w.transmit(1, b"1234")
    with pytest.raises(InvalidFrame):
        w.inject(1, bytes(128))
    with pytest.raises(SelfLink):
        w.set_attenuation(1, 1, 0)
    with pytest.raises(DuplicateNode):
        w.register_node(NodeConfig(1))
    w.run_until(10)
    with pytest.raises(TimeInPast):
        w.add_interference(1, 0, 5, 1)
    with pytest.raises(TimeInPast):
        w.run_until(5)


def test_accounting():
    w = world(tx_cost_mw=60, rx_cost_mw=54)
    ack = mac.encode_frame(mac.MacFrame(mac.FrameControl(frame_type=mac.FrameType.ACK),
                                        payload=bytes(6)))
    w.transmit(1, ack, 0)
    w.run_until_idle()
    s = w.account()
    assert s[1].tx_airtime_us == 544 and s[2].rx_airtime_us == 544
    assert s[1].energy_uj == pytest.approx(544 * 60 / 1000)
    assert s[2].energy_uj == pytest.approx(544 * 54 / 1000)
    doubled = world(tx_cost_mw=120, rx_cost_mw=108)
    doubled.transmit(1, ack, 0)
    doubled.run_until_idle()
    assert doubled.account()[1].energy_uj == pytest.approx(2 * s[1].energy_uj)


def test_no_traffic_zero_stats():
    s = world().account()
    assert all(v == 0 for n in s.values() for v in vars(n).values())


def test_lqi_linear_in_margin():
    assert send(world(links={(1, 2): 340}), 1, 2).lqi[2] == 0
    assert send(world(links={(1, 2): 300}), 1, 2).lqi[2] == 40
    assert send(world(links={(1, 2): 0}), 1, 2).lqi[2] == 255


def test_reset_restores_definition():
    w = world()
    sink = []
    w.capture_sinks.append(sink.append)
    send(w, 1, 2)
    w.register_node(NodeConfig(5))
    w.reset()
    assert sorted(w.nodes) == [1, 2] and w.now == 0 and not w.log
    send(w, 1, 2)
    assert len(sink) == 4


@st.composite
def geometries(draw):
    n = draw(st.integers(2, 4))
    nodes = [NodeConfig(i, tx_power_dbm=draw(st.integers(-20, 5)),
                        sensitivity_dbm=draw(st.integers(-100, -60))) for i in range(1, n + 1)]
    links = {(a, b): draw(st.integers(0, 500)) for a in range(1, n + 1)
             for b in range(1, n + 1) if a != b}
    interference = draw(st.lists(st.tuples(st.integers(1, n), st.integers(-30, 10),
                                           st.integers(0, 3000), st.integers(0, 3000)),
                                 max_size=2))
    return nodes, links, interference


@settings(max_examples=100)
@given(geometries(), st.integers(0, 400))
def test_conservation_and_monotone_isolation(geo, extra):
    nodes, links, interference = geo

    def run(links):
        w = World(WorldConfig(nodes=list(nodes), links=dict(links)))
        for at, p, s, d in interference:
            w.add_interference(at, p, s, d)
        w.transmit(1, data_frame(), 0)
        w.run_until_idle()
        return w

    base = run(links)
    out = base.log[0].outcomes
    stats = base.account()
    slots = sum(o != Outcome.ISOLATED for o in out.values())
    assert sum(stats[r].frames_rx + stats[r].frames_dropped for r in out) == slots
    worse = run({**links, (1, 2): min(0xFFFE, links[(1, 2)] + extra)})
    if out[2] != Outcome.DELIVERED:
        assert worse.log[0].outcomes[2] != Outcome.DELIVERED
