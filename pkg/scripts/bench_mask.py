"""Per-packet masking cost, scalar reference path vs numpy batch path.

The published reference cost is 3.8 us per packet against a 1.33 ms packet interval.
"""
import argparse
import timeit

from lidarmask.mask import apply_mask, apply_mask_batch, build_mask
from lidarmask.packet import NOMINAL_PACKET_INTERVAL_S, reference_layout
from lidarmask.synthetic import synthetic_buffer

REFERENCE_US_PER_PACKET = 3.8


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--packets", type=int, default=45_240)
    ap.add_argument("--bits", type=int, default=4)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    layout = reference_layout()
    mask = build_mask(layout, args.bits)
    buf = synthetic_buffer(args.packets)
    packets = [buf[i:i + 1206] for i in range(0, len(buf), 1206)]
    out = bytearray(len(buf))

    batch = min(timeit.repeat(lambda: apply_mask_batch(buf, mask, out=out),
                              number=1, repeat=args.repeats))
    sample = packets[:5000]
    scalar = min(timeit.repeat(lambda: [apply_mask(p, mask) for p in sample],
                               number=1, repeat=args.repeats)) * len(packets) / len(sample)

    budget_us = NOMINAL_PACKET_INTERVAL_S * 1e6
    for name, t in (("batch", batch), ("scalar", scalar)):
        us = t / len(packets) * 1e6
        print(f"{name:6}: {us:7.3f} us/packet, {len(packets) / t:12,.0f} packets/s, "
              f"{us / budget_us:.2%} of the packet interval")
    print(f"ref.  : {REFERENCE_US_PER_PACKET:7.3f} us/packet")


if __name__ == "__main__":
    main()
