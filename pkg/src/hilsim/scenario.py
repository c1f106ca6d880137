"""Scenario assembly: simulated nodes, the ping application, and a run driver."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from . import mac
from .backend import World
from .client import EmuciClient, LoopbackTransport, TcpTransport
from .config import ScenarioConfig
from .kernel import (ClockMode, EventKind, ExternalInterfaceModule, RealtimeReport,
                     SimClock, Simulator)
from .pcap import PcapWriter
from .server import EmulationServer


class PingApp:
    """Sends ``count`` data frames, one every ``interval_us``, and logs replies."""

    def __init__(self, sim: Simulator, module: ExternalInterfaceModule, dest: int,
                 dest_pan: int = 0x0022, count: int = 100, start_us: int = 1000,
                 interval_us: int = 5000, msdu_len: int = 16, seed: int = 1,
                 ack_request: bool = False):
        self.sim = sim
        self.module = module
        self.dest = mac.MacAddress.short(dest)
        self.dest_pan = dest_pan
        self.count = count
        self.start_us = start_us
        self.interval_us = interval_us
        self.ack_request = ack_request
        rng = random.Random(seed)
        self.payloads = [bytes(rng.getrandbits(8) for _ in range(msdu_len))
                         for _ in range(count)]
        self.sent: list[tuple[int, int, bytes]] = []  # (index, time, msdu)
        self.confirms: list[mac.McpsDataConfirm] = []
        self.replies: list[mac.McpsDataIndication] = []
        module.app = self

    def start(self) -> None:
        if self.count:
            self.sim.schedule(self.start_us, EventKind.TIMER_FIRED, self._fire, 0)

    def _fire(self, ev) -> None:
        k = ev.data
        msdu = self.payloads[k]
        self.sent.append((k, self.sim.now, msdu))
        self.module.ext_send(mac.McpsDataRequest(
            dst_addr=self.dest, dst_pan_id=self.dest_pan, msdu=msdu,
            msdu_handle=k & 0xFF, ack_request=self.ack_request))
        if k + 1 < self.count:
            self.sim.schedule_in(self.interval_us, EventKind.TIMER_FIRED, self._fire, k + 1)

    def on_confirm(self, conf: mac.McpsDataConfirm) -> None:
        self.confirms.append(conf)

    def on_indication(self, ind: mac.McpsDataIndication) -> None:
        self.replies.append(ind)


@dataclass
class RunResult:
    sim: Simulator
    modules: dict[int, ExternalInterfaceModule]
    app: PingApp | None
    stats: dict[int, dict]
    client: EmuciClient
    executed: int = 0
    realtime: RealtimeReport | None = None
    pcap_path: str | None = None
    extras: dict = field(default_factory=dict)


def open_inprocess(cfg: ScenarioConfig, record: bool = False) -> tuple[EmulationServer, EmuciClient]:
    world = World(cfg.world_config())
    server = EmulationServer(world, capture_path=cfg["emulator.captureFile"] or None,
                             trace=cfg["emulator.trace"])
    return server, EmuciClient(LoopbackTransport(server), record=record)


def open_tcp(cfg: ScenarioConfig, record: bool = False) -> EmuciClient:
    return EmuciClient(TcpTransport(cfg.server_ip, cfg.server_port), record=record)


def setup(cfg: ScenarioConfig, client: EmuciClient, realtime: bool | None = None):
    """Handshake, register simulated nodes, build kernel, modules and app."""
    client.hello()
    for nid, n in sorted(cfg.sim_nodes.items()):
        client.register_node(nid, n["shortAddr"], n["panId"], n["txPowerDbm"],
                             n["sensitivityDbm"], "sink")
    if cfg.sim_nodes:
        client.subscribe_frames(sorted(cfg.sim_nodes))
    if realtime is None:
        realtime = cfg.mode == "realtime"
    clock = SimClock(mode=ClockMode.REAL_TIME_PACED if realtime else ClockMode.AS_FAST_AS_POSSIBLE,
                     tolerance_us=cfg["sim.realtimeToleranceUs"])
    sim = Simulator(clock)
    recorder = None
    if cfg.pcap_file and cfg.num_pcap_rec >= 1:
        recorder = PcapWriter(cfg.pcap_file)
    modules = {}
    for nid, n in sorted(cfg.sim_nodes.items()):
        # a single recorder per side; it sits on the first simulated node
        modules[nid] = ExternalInterfaceModule(
            sim, client, nid, n["shortAddr"], n["panId"],
            recorder=recorder if not modules else None)
    app = None
    if cfg["app.type"] == "ping":
        node = cfg["app.node"] if cfg["app.node"] >= 0 else min(cfg.sim_nodes)
        app = PingApp(sim, modules[node], cfg["app.dest"], cfg["app.destPanId"],
                      cfg["app.count"], cfg["app.startUs"], cfg["app.intervalUs"],
                      cfg["app.msduLen"], cfg.seed, cfg["app.ackRequest"])
        app.start()
    return sim, modules, app, recorder


def run_scenario(cfg: ScenarioConfig, client: EmuciClient,
                 realtime: bool | None = None) -> RunResult:
    sim, modules, app, recorder = setup(cfg, client, realtime)
    report = None
    try:
        if sim.clock.mode == ClockMode.REAL_TIME_PACED:
            report = sim.run_realtime(cfg.until_us, client)
            executed = report.executed
        else:
            executed = sim.run_lockstep(cfg.until_us, client)
    finally:
        if recorder is not None:
            recorder.close()
    stats = client.get_stats()
    return RunResult(sim, modules, app, stats, client, executed, report,
                     recorder.path if recorder else None)


def format_stats(result: RunResult) -> str:
    cols = ("node", "framesTx", "framesRx", "framesDropped", "txAirtimeUs",
            "rxAirtimeUs", "energyMicroJoule")
    rows = []
    for nid, s in sorted(result.stats.items()):
        rows.append((str(nid), str(s["frames_tx"]), str(s["frames_rx"]),
                     str(s["frames_dropped"]), str(s["tx_airtime_us"]),
                     str(s["rx_airtime_us"]), f"{s['energy_uj']:.3f}"))
    widths = [max(len(c), *(len(r[i]) for r in rows)) if rows else len(c)
              for i, c in enumerate(cols)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in rows]
    for nid, m in sorted(result.modules.items()):
        c = m.counters
        lines.append(f"sim node {nid}: sent={c.sent} confirmed={c.confirmed} "
                     f"delivered={c.delivered} dropFcs={c.drop_fcs} "
                     f"dropNonData={c.drop_non_data} dropMalformed={c.drop_malformed}")
    lines.append(f"events executed: {result.executed}, "
                 f"causality clamps: {result.sim.causality_violations}")
    if result.realtime:
        r = result.realtime
        lines.append(f"realtime: maxLagUs={r.max_lag_us} overrunCount={r.overrun_count}")
    return "\n".join(lines)


def stats_json(result: RunResult) -> dict:
    return {
        "nodes": {str(nid): s for nid, s in sorted(result.stats.items())},
        "simNodes": {str(nid): vars(m.counters) for nid, m in sorted(result.modules.items())},
        "eventsExecuted": result.executed,
        "causalityViolations": result.sim.causality_violations,
        "realtime": vars(result.realtime) if result.realtime else None,
        "pcapFile": result.pcap_path,
    }
