"""Time the sliding-histogram median against scipy's sort-based filter.

The histogram filter's cost per pixel should stay flat as the kernel grows.

    python3 scripts/bench_median.py --size 512 --kernels 3 15 31 51 101
"""

import argparse
import time

import numpy as np
from scipy import ndimage

from fundus2ffa.image_core import median_filter, quantize8


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--size", type=int, default=512)
    ap.add_argument("--kernels", type=int, nargs="+", default=[3, 15, 31, 51, 101])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--no-scipy", action="store_true", help="skip the (slow for large k) scipy baseline")
    args = ap.parse_args()

    img = np.random.default_rng(0).random((args.size, args.size))
    median_filter(img[:16, :16], 3)  # jit warm-up
    print(f"{'k':>5} {'histogram s':>12} {'ns/px':>8} {'scipy s':>10}  equal")
    for k in args.kernels:
        t_h = best_of(lambda: median_filter(img, k), args.repeat)
        line = f"{k:5d} {t_h:12.4f} {1e9 * t_h / img.size:8.1f}"
        if not args.no_scipy:
            codes = quantize8(img).astype(np.uint8)
            t_s = best_of(lambda: ndimage.median_filter(codes, size=k, mode="mirror"), 1)
            same = np.array_equal(np.rint(median_filter(img, k) * 255), ndimage.median_filter(codes, size=k, mode="mirror"))
            line += f" {t_s:10.4f}  {same}"
        print(line)


if __name__ == "__main__":
    main()
