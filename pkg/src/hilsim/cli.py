"""``hilsim`` command line: serve, run, dump, codec-check."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__, mac, pcap
from .backend import World
from .client import ConnectionClosed
from .config import ConfigError, ScenarioConfig, load_config
from .emuci import DEFAULT_PORT
from .scenario import format_stats, open_inprocess, open_tcp, run_scenario, stats_json
from .selfcheck import run_codec_check
from .server import EmulationServer, LegacyPcapServer, TcpEmuciServer

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONNECTION = 2
EXIT_CONFIG = 3
EXIT_CAPTURE = 4

LOG_ENV = "HILSIM_LOG_LEVEL"

log = logging.getLogger("hilsim")


def _load(args) -> ScenarioConfig:
    try:
        cfg = load_config(args.config, args.section)
    except OSError as e:
        raise ConfigError(f"cannot read {args.config}: {e.strerror or e}") from e
    for w in cfg.warnings:
        log.warning("%s: %s", args.config, w)
    if getattr(args, "port", None) is not None:
        cfg["server.pcapRecorder[0].serverPort"] = args.port
    if getattr(args, "seed", None) is not None:
        cfg["sim.seed"] = args.seed
    if getattr(args, "until_us", None) is not None:
        cfg["sim.untilUs"] = args.until_us
    if getattr(args, "realtime", False):
        cfg["sim.mode"] = "realtime"
    return cfg


def cmd_serve(args) -> int:
    cfg = _load(args)
    world = World(cfg.world_config())
    legacy = args.legacy or cfg["emulator.protocol"] == "pcap"
    host, port = cfg.server_ip, cfg.server_port
    if legacy:
        node = cfg["emulator.legacyNode"]
        server = LegacyPcapServer(world, host, port, node if node >= 0 else None)
    else:
        emulation = EmulationServer(world, capture_path=cfg["emulator.captureFile"] or None,
                                    trace=cfg["emulator.trace"])
        server = TcpEmuciServer(emulation, host, port)
    h, p = server.address
    print(f"{'pcap' if legacy else 'emuci'} server listening on {h}:{p}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args)
    if cfg["emulator.protocol"] != "emuci":
        raise ConfigError("run speaks EmuCI only; emulator.protocol must be 'emuci'")
    server = None
    if cfg["sim.transport"] == "inprocess" or not cfg.network_enabled:
        server, client = open_inprocess(cfg)
    else:
        try:
            client = open_tcp(cfg)
        except OSError as e:
            print(f"error: connection refused by {cfg.server_ip}:{cfg.server_port}: {e}",
                  file=sys.stderr)
            return EXIT_CONNECTION
    try:
        result = run_scenario(cfg, client)
    except ConnectionClosed as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONNECTION
    finally:
        client.close()
        if server is not None:
            server.close()
    if args.json:
        print(json.dumps(stats_json(result), indent=2, sort_keys=True))
    else:
        print(format_stats(result))
    return EXIT_OK


def cmd_dump(args) -> int:
    try:
        header, records = pcap.read_pcap(args.capture)
    except (pcap.PcapError, OSError) as e:
        print(f"error: {args.capture}: {e}", file=sys.stderr)
        return EXIT_CAPTURE
    for rec in records:
        d = mac.describe(rec.data)
        seq = "-" if d["seq"] is None else d["seq"]
        print(f"{rec.ts_sec}.{rec.ts_usec:06d} len={d['len']} {d['type']} "
              f"{d['src']}->{d['dst']} seq={seq} fcs={'ok' if d['fcs_ok'] else 'bad'}")
    return EXIT_OK


def cmd_codec_check(args) -> int:
    results, elapsed = run_codec_check()
    failed = [r for r in results if not r.ok]
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name}")
    print(f"{len(results) - len(failed)}/{len(results)} vectors passed in {elapsed * 1e3:.1f} ms")
    return EXIT_FAILURE if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hilsim", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--log-level", default=os.environ.get(LOG_ENV, "WARNING"),
                   help=f"logging level (default from ${LOG_ENV}, else WARNING)")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("config", help="scenario .ini file")
        sp.add_argument("--section", default="General", help="config section to apply")
        sp.add_argument("--port", type=int, help=f"override serverPort (default {DEFAULT_PORT})")

    sp = sub.add_parser("serve", help="host the emulation backend")
    with_config(sp)
    sp.add_argument("--legacy", action="store_true", help="raw PCAP over TCP instead of EmuCI")
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("run", help="run the simulated side of a scenario")
    with_config(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--until-us", type=int)
    sp.add_argument("--realtime", action="store_true")
    sp.add_argument("--json", action="store_true", help="print stats as JSON")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("dump", help="list the frames in a capture file")
    sp.add_argument("capture")
    sp.set_defaults(func=cmd_dump)

    sp = sub.add_parser("codec-check", help="run the built-in codec vectors")
    sp.set_defaults(func=cmd_codec_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
