"""Sweep one link's attenuation and print where delivery stops."""

import argparse

from hilsim import mac
from hilsim.backend import NodeConfig, Outcome, World, WorldConfig


def outcome_at(quarter_db: int, tx_dbm: int, sens_dbm: int) -> Outcome:
    world = World(WorldConfig(nodes=[NodeConfig(1, tx_power_dbm=tx_dbm),
                                     NodeConfig(2, sensitivity_dbm=sens_dbm)],
                              links={(1, 2): quarter_db}))
    frame = mac.encode_frame(mac.MacFrame(
        mac.FrameControl(pan_id_compression=True, dest_addr_mode=mac.AddrMode.SHORT,
                         src_addr_mode=mac.AddrMode.SHORT),
        0, 0x22, mac.MacAddress.short(2), None, mac.MacAddress.short(1), b"sweep"))
    world.transmit(1, frame, 0)
    world.run_until_idle()
    return world.log[-1].outcomes[2]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--tx-dbm", type=int, default=0)
    ap.add_argument("--sens-dbm", type=int, default=-85)
    ap.add_argument("--from-q", type=int, default=300)
    ap.add_argument("--to-q", type=int, default=380)
    ap.add_argument("--step", type=int, default=4)
    args = ap.parse_args()

    last = None
    for q in range(args.from_q, args.to_q + 1, args.step):
        out = outcome_at(q, args.tx_dbm, args.sens_dbm)
        print(f"{q:5d} qdB  {q / 4:6.2f} dB  {out.value}")
        if last == Outcome.DELIVERED and out != Outcome.DELIVERED:
            print(f"      delivery stops above {q - args.step} qdB")
        last = out
    threshold = 4 * (args.tx_dbm - args.sens_dbm)
    print(f"expected threshold: {threshold} qdB delivered, {threshold + 1} qdB not")
    print(f"check: {outcome_at(threshold, args.tx_dbm, args.sens_dbm).value} / "
          f"{outcome_at(threshold + 1, args.tx_dbm, args.sens_dbm).value}")


if __name__ == "__main__":
    main()
