"""Measured vs predicted masking error for every n.

Uniform residues predict a mean of (2^n - 1)/2 steps; real scenes land near
it. The maximum is (2^n - 1) steps, e.g. 510 mm at n = 8.
"""
import argparse
import math

from lidarmask.mask import build_mask, error_bound, mask_packets
from lidarmask.metrics import error_stats
from lidarmask.packet import reference_layout
from lidarmask.synthetic import synthetic_packets


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--packets", type=int, default=3000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    layout = reference_layout()
    s = layout.step_size_mm
    packets = synthetic_packets(args.packets, seed=args.seed)
    print(f"{'n':>3} {'mean':>9} {'uniform':>9} {'std':>9} {'uniform':>9} {'max':>7} {'bound':>7}")
    for n in range(layout.max_masked_bits + 1):
        e = error_stats(packets, mask_packets(packets, build_mask(layout, n)), layout, n)
        q = 2 ** n
        print(f"{n:>3} {e.mean_mm:9.2f} {(q - 1) / 2 * s:9.2f} {e.std_mm:9.2f} "
              f"{math.sqrt((q * q - 1) / 12) * s:9.2f} {e.max_mm:7.0f} "
              f"{error_bound(n, s).attainable_max_mm:7.0f}")
    print(f"nulls excluded: {e.nulls_excluded} of {e.count + e.nulls_excluded}")


if __name__ == "__main__":
    main()
