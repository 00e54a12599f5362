"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--rows 4096] [--level 8] [--repeat 3]
"""

import argparse
import timeit

import numpy as np

from rmlmc import _kernels_py

try:
    from rmlmc import _kernels
except ImportError:
    _kernels = None


def _cases(rows, level):
    rng = np.random.default_rng(0)
    steps = 1 << level
    h = 1.0 / steps
    slot = np.full(level + 1, -1, dtype=np.int64)
    slot[level - 1], slot[level] = 0, 1
    dW = rng.standard_normal((rows, steps)) * np.sqrt(h)
    dW2 = rng.standard_normal((rows, steps)) * np.sqrt(h)
    cdf = np.append(np.cumsum([0.4, 0.3, 0.15, 0.08, 0.04]), 1.0)
    u = rng.random((rows, 256))
    off = rng.random(rows)

    def scalar(mod):
        x = np.ones((rows, 2))
        acc = np.zeros((rows, level))
        mod.scalar_advance(0, np.array([0.05, 0.2]), dW, level, 0, slot, acc, x, 1.0)

    def heston(mod):
        s, v = np.ones((rows, 2)), np.full((rows, 2), 0.04)
        acc1, acc2 = np.zeros((rows, level)), np.zeros((rows, level))
        anti = np.zeros((rows, 4))
        anti[:, 0], anti[:, 1] = 1.0, 0.04
        mod.heston_advance(np.array([0.05, 5.0, 0.04, 0.25, -0.5]), dW, dW2, level, 0, slot,
                           acc1, acc2, s, v, True, anti, 1.0)

    return {
        "scalar_advance": scalar,
        "heston_advance": heston,
        "sweep_counts": lambda mod: mod.sweep_counts(u, cdf),
        "sweep_counts_shared": lambda mod: mod.sweep_counts_shared(off, 256, cdf),
        "sweep_levels": lambda mod: mod.sweep_levels(u.ravel(), cdf),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--rows", type=int, default=4096)
    ap.add_argument("--level", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled kernels are not built; only the fallback can be timed")
    print(f"{'kernel':<22}{'python s':>12}{'cython s':>12}{'speed-up':>10}")
    for name, fn in _cases(args.rows, args.level).items():
        t_py = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat))
        if _kernels is None:
            print(f"{name:<22}{t_py:>12.4f}{'-':>12}{'-':>10}")
            continue
        t_cy = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat))
        print(f"{name:<22}{t_py:>12.4f}{t_cy:>12.4f}{t_py / t_cy:>9.1f}x")


if __name__ == "__main__":
    main()
