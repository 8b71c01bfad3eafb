"""Write a pcap of the synthetic room scene, paced at the sensor's packet rate.

    python3 scripts/make_synthetic_capture.py room.pcap --seconds 60
"""
import argparse

from lidarmask.ingest import NOMINAL_INTERVAL_NS, PcapWriter
from lidarmask.synthetic import synthetic_buffer


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("output")
    ap.add_argument("--seconds", type=float, default=60.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--noise-mm", type=float, default=10.0)
    args = ap.parse_args()

    count = round(args.seconds / (NOMINAL_INTERVAL_NS * 1e-9))
    buf = synthetic_buffer(count, seed=args.seed, noise_mm=args.noise_mm)
    with open(args.output, "wb") as f:
        writer = PcapWriter(f)
        for i in range(count):
            writer.write(i * NOMINAL_INTERVAL_NS, buf[i * 1206:(i + 1) * 1206])
    print(f"{count} packets ({args.seconds:g} s) -> {args.output}")


if __name__ == "__main__":
    main()
