"""Run the bundled ping-echo scenario in-process and check echo timing."""

import argparse
from pathlib import Path

from hilsim import mac
from hilsim.config import load_config
from hilsim.pcap import read_pcap
from hilsim.scenario import format_stats, open_inprocess, run_scenario

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "ping_echo.ini"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--count", type=int, default=100)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", default="results/ping_echo.pcap")
    args = ap.parse_args()

    cfg = load_config(CONFIG)
    cfg["app.count"] = args.count
    cfg["sim.seed"] = args.seed
    cfg["server.pcapRecorder[0].pcapFile"] = args.out
    server, client = open_inprocess(cfg)
    result = run_scenario(cfg, client)
    print(format_stats(result))

    turnaround = cfg.emu_nodes[2]["turnaroundUs"]
    app = result.app
    late = 0
    for (k, t_sent, msdu), reply in zip(app.sent, app.replies):
        expected = t_sent + 2 * mac.airtime(len(msdu) + 11) + turnaround
        late += reply.timestamp != expected or reply.msdu != msdu
    _, records = read_pcap(args.out)
    print(f"{len(records)} frames captured in {args.out}; "
          f"{len(app.replies)}/{len(app.sent)} echoes, {late} off-schedule")


if __name__ == "__main__":
    main()
