"""Frames from node 1 to node 2 while a jammer near node 3 is active."""

import argparse
from pathlib import Path

from hilsim.config import load_config
from hilsim.scenario import format_stats, open_inprocess, run_scenario

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "interference.ini"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--section", default="General", choices=("General", "Corrupt"))
    args = ap.parse_args()

    cfg = load_config(CONFIG, args.section)
    server, client = open_inprocess(cfg)
    result = run_scenario(cfg, client)
    world = server.world
    print(f"jam mode: {cfg['emulator.jamMode']}")
    for tx in world.log:
        print(f"{tx.time_us:7d} us  node {tx.from_node} -> node 2: {tx.outcomes[2].value}"
              if tx.from_node != 2 else
              f"{tx.time_us:7d} us  node 2 -> node 1: {tx.outcomes[1].value}")
    print(format_stats(result))


if __name__ == "__main__":
    main()
