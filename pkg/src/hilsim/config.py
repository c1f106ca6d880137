"""Scenario configuration in an omnetpp.ini-like dialect.

Keys may start with ``**.`` (any prefix) and contain ``*`` (any run of
characters within one dotted segment). Every setting this package knows
has a concrete path under the root ``hil``; for each one the most specific
matching key supplies the value. Keys that match no known setting are
reported as warnings.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .backend import Behavior, InterferenceSource, JamMode, NodeConfig, WorldConfig

ROOT = "hil"


class ConfigError(Exception):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        where = f"line {lineno}: " if lineno is not None else ""
        super().__init__(where + message)


class ConfigSyntaxError(ConfigError):
    pass


class ConfigTypeError(ConfigError):
    pass


@dataclass(frozen=True)
class Entry:
    pattern: str
    value: object
    lineno: int
    section: str
    order: int

    @property
    def wildcard(self) -> bool:
        return "*" in self.pattern

    def specificity(self, section_rank: dict[str, int]) -> tuple:
        literal = len(self.pattern.replace("*", ""))
        return (self.wildcard, -literal, section_rank.get(self.section, 99), self.order)

    def regex(self) -> re.Pattern:
        out = []
        i = 0
        p = self.pattern
        if not p.startswith("*") and not p.startswith(ROOT + "."):
            p = f"{ROOT}.{p}"
        while i < len(p):
            if p.startswith("**", i):
                out.append(".*")
                i += 2
            elif p[i] == "*":
                out.append(r"[^.]*")
                i += 1
            else:
                out.append(re.escape(p[i]))
                i += 1
        return re.compile("".join(out) + r"\Z")


_STRING = re.compile(r'"((?:[^"\\]|\\.)*)"')
_INT = re.compile(r"[+-]?(0[xX][0-9a-fA-F]+|\d+)\Z")
_FLOAT = re.compile(r"[+-]?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?\Z")
_BARE = re.compile(r"[A-Za-z_][A-Za-z0-9_.\-:]*\Z")


def _parse_value(raw: str, lineno: int):
    raw = raw.strip()
    m = _STRING.match(raw)
    if m and m.end() == len(raw):
        return re.sub(r"\\(.)", r"\1", m.group(1))
    if raw in ("true", "false"):
        return raw == "true"
    if _INT.match(raw):
        return int(raw, 16) if "x" in raw.lower() else int(raw, 10)
    if _FLOAT.match(raw):
        return float(raw)
    if _BARE.match(raw):
        return raw
    raise ConfigSyntaxError(f"cannot parse value {raw!r}", lineno)


def _strip_comment(line: str) -> str:
    in_str = False
    esc = False
    for i, ch in enumerate(line):
        if esc:
            esc = False
        elif ch == "\\" and in_str:
            esc = True
        elif ch == '"':
            in_str = not in_str
        elif ch == "#" and not in_str:
            return line[:i]
    return line


def parse_entries(text: str) -> list[Entry]:
    entries = []
    section = "General"
    for lineno, line in enumerate(text.splitlines(), 1):
        line = _strip_comment(line).strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigSyntaxError(f"bad section header {line!r}", lineno)
            section = line[1:-1].strip()
            if section.startswith("Config "):
                section = section[len("Config "):].strip()
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep or not key or any(c.isspace() for c in key):
            raise ConfigSyntaxError(f"expected 'key = value', got {line!r}", lineno)
        entries.append(Entry(key, _parse_value(raw, lineno), lineno, section, len(entries)))
    return entries


# concrete path suffix -> (type, default)
SETTINGS: dict[str, tuple[type, object]] = {
    "server.numPcapRec": (int, 1),
    "server.pcapRecorder[0].networkEnabled": (bool, True),
    "server.pcapRecorder[0].serverIP": (str, "localhost"),
    "server.pcapRecorder[0].serverPort": (int, 4242),
    "server.pcapRecorder[0].pcapFile": (str, ""),
    "sim.mode": (str, "lockstep"),
    "sim.transport": (str, "tcp"),
    "sim.untilUs": (int, 1_000_000),
    "sim.seed": (int, 1),
    "sim.realtimeToleranceUs": (int, 10_000),
    "app.type": (str, "none"),
    "app.node": (int, -1),
    "app.dest": (int, 2),
    "app.destPanId": (int, 0x0022),
    "app.count": (int, 100),
    "app.startUs": (int, 1000),
    "app.intervalUs": (int, 5000),
    "app.msduLen": (int, 16),
    "app.ackRequest": (bool, False),
    "emulator.protocol": (str, "emuci"),
    "emulator.jamMode": (str, "drop"),
    "emulator.sirThresholdDb": (float, 3.0),
    "emulator.txCostMw": (float, 60.0),
    "emulator.rxCostMw": (float, 54.0),
    "emulator.defaultQuarterDb": (int, 160),
    "emulator.captureFile": (str, ""),
    "emulator.legacyNode": (int, -1),
    "emulator.trace": (bool, False),
}

SIM_NODE_SETTINGS = {"shortAddr": (int, None), "panId": (int, 0x0022),
                     "txPowerDbm": (int, 0), "sensitivityDbm": (int, -85)}
EMU_NODE_SETTINGS = {"behavior": (str, "sink"), "shortAddr": (int, None),
                     "panId": (int, 0x0022), "txPowerDbm": (int, 0),
                     "sensitivityDbm": (int, -85), "turnaroundUs": (int, 0),
                     "script": (str, "")}

CHOICES = {
    "sim.mode": ("lockstep", "realtime"),
    "sim.transport": ("tcp", "inprocess"),
    "app.type": ("none", "ping"),
    "emulator.protocol": ("emuci", "pcap"),
    "emulator.jamMode": ("drop", "corrupt"),
}

_SIM_NODE = re.compile(r"(?:^|\.)sim\.node\[(\d+)\]\.")
_EMU_NODE = re.compile(r"(?:^|\.)emulator\.node\[(\d+)\]\.")
_LINK = re.compile(r"(?:^|\.)emulator\.attenuation\[(\d+)\]\[(\d+)\]$")
_INTERF = re.compile(r"(?:^|\.)emulator\.interference\[(\d+)\]$")


@dataclass
class ScenarioConfig:
    values: dict[str, object] = field(default_factory=dict)
    sim_nodes: dict[int, dict] = field(default_factory=dict)
    emu_nodes: dict[int, dict] = field(default_factory=dict)
    links: dict[tuple[int, int], int] = field(default_factory=dict)
    interference: list[InterferenceSource] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __getitem__(self, key: str):
        return self.values[key]

    def __setitem__(self, key: str, value) -> None:
        self.values[key] = value

    @property
    def server_ip(self) -> str:
        return self.values["server.pcapRecorder[0].serverIP"]

    @property
    def server_port(self) -> int:
        return self.values["server.pcapRecorder[0].serverPort"]

    @property
    def pcap_file(self) -> str:
        return self.values["server.pcapRecorder[0].pcapFile"]

    @property
    def num_pcap_rec(self) -> int:
        return self.values["server.numPcapRec"]

    @property
    def network_enabled(self) -> bool:
        return self.values["server.pcapRecorder[0].networkEnabled"]

    @property
    def mode(self) -> str:
        return self.values["sim.mode"]

    @property
    def until_us(self) -> int:
        return self.values["sim.untilUs"]

    @property
    def seed(self) -> int:
        return self.values["sim.seed"]

    def world_config(self) -> WorldConfig:
        nodes = []
        for nid in sorted(self.emu_nodes):
            n = self.emu_nodes[nid]
            nodes.append(NodeConfig(
                node_id=nid, short_addr=n["shortAddr"], pan_id=n["panId"],
                tx_power_dbm=n["txPowerDbm"], sensitivity_dbm=n["sensitivityDbm"],
                behavior=Behavior(n["behavior"]), turnaround_us=n["turnaroundUs"],
                script=n["script"]))
        return WorldConfig(
            nodes=nodes, links=dict(self.links), interference=list(self.interference),
            sir_threshold_db=self.values["emulator.sirThresholdDb"],
            jam_mode=JamMode(self.values["emulator.jamMode"]),
            tx_cost_mw=self.values["emulator.txCostMw"],
            rx_cost_mw=self.values["emulator.rxCostMw"],
            default_quarter_db=self.values["emulator.defaultQuarterDb"])


def _check_type(name: str, typ: type, entry: Entry):
    v = entry.value
    if typ is float and isinstance(v, int) and not isinstance(v, bool):
        return float(v)
    if typ is int and isinstance(v, bool):
        ok = False
    else:
        ok = isinstance(v, typ)
    if not ok:
        raise ConfigTypeError(
            f"{name} expects {typ.__name__}, got {type(v).__name__} {v!r}", entry.lineno)
    choices = CHOICES.get(name)
    if choices and v not in choices:
        raise ConfigTypeError(f"{name} must be one of {', '.join(choices)}, got {v!r}",
                              entry.lineno)
    return v


def _parse_script(text: str, lineno: int) -> tuple[tuple[int, bytes], ...]:
    """``"1000:41880100...;2000:..."`` -> ((1000, b"..."), ...)"""
    out = []
    for part in filter(None, (p.strip() for p in text.split(";"))):
        t, _, hexdata = part.partition(":")
        try:
            out.append((int(t), bytes.fromhex(hexdata)))
        except ValueError:
            raise ConfigTypeError(f"bad script entry {part!r}", lineno) from None
    return tuple(out)


def parse_config(text: str, config_name: str = "General") -> ScenarioConfig:
    entries = parse_entries(text)
    rank = {config_name: 0, "General": 1}
    entries = [e for e in entries if e.section in rank]
    compiled = [(e, e.regex()) for e in entries]
    used: set[int] = set()

    def lookup(suffix: str):
        path = f"{ROOT}.{suffix}"
        hits = [e for e, rx in compiled if rx.match(path)]
        if not hits:
            return None
        best = min(hits, key=lambda e: e.specificity(rank))
        used.update(e.order for e in hits)
        return best

    cfg = ScenarioConfig()
    for name, (typ, default) in SETTINGS.items():
        e = lookup(name)
        cfg.values[name] = default if e is None else _check_type(name, typ, e)

    def indices(rx: re.Pattern) -> list:
        found = set()
        for e in entries:
            m = rx.search(e.pattern)
            if m:
                found.add(tuple(int(g) for g in m.groups()))
        return sorted(found)

    for table, rx, prefix, settings in (
            (cfg.sim_nodes, _SIM_NODE, "sim.node", SIM_NODE_SETTINGS),
            (cfg.emu_nodes, _EMU_NODE, "emulator.node", EMU_NODE_SETTINGS)):
        for (nid,) in indices(rx):
            node = {}
            for attr, (typ, default) in settings.items():
                name = f"{prefix}[{nid}].{attr}"
                e = lookup(name)
                if e is None:
                    node[attr] = default
                    continue
                v = _check_type(name, typ, e)
                if attr == "script":
                    v = _parse_script(v, e.lineno)
                elif attr == "behavior":
                    try:
                        Behavior(v)
                    except ValueError:
                        raise ConfigTypeError(f"unknown behavior {v!r}", e.lineno) from None
                node[attr] = v
            if node.get("script") == "":
                node["script"] = ()
            if node["shortAddr"] is None:
                node["shortAddr"] = nid
            table[nid] = node

    for a, b in indices(_LINK):
        e = lookup(f"emulator.attenuation[{a}][{b}]")
        if a == b:
            raise ConfigTypeError(f"self link {a}->{b}", e.lineno)
        cfg.links[(a, b)] = _check_type("attenuation", int, e)

    for (k,) in indices(_INTERF):
        e = lookup(f"emulator.interference[{k}]")
        v = _check_type("interference", str, e)
        try:
            at, power, start, dur = (int(x) for x in v.split(","))
        except ValueError:
            raise ConfigTypeError(
                f"interference needs 'atNode,powerDbm,startUs,durationUs', got {v!r}",
                e.lineno) from None
        cfg.interference.append(InterferenceSource(at, power, start, dur))

    for e in entries:
        if e.order not in used:
            cfg.warnings.append(f"line {e.lineno}: unknown key {e.pattern}")
    if cfg.num_pcap_rec > 1:
        cfg.warnings.append(
            f"numPcapRec = {cfg.num_pcap_rec}: only pcapRecorder[0] is used")
    return cfg


def load_config(path, config_name: str = "General") -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), config_name)
