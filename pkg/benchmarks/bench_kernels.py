"""Compare the compiled resolvent kernel with the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 20]

Prints the median time per call for a range of reduced orders and shift
counts, together with the largest deviation between the two backends.
"""

import argparse
import timeit

import numpy as np

from phmor import _kernels_py

try:
    from phmor import _kernels
except ImportError:
    _kernels = None


def case(r, m, k, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((r, r)) - 2 * np.sqrt(r) * np.eye(r)
    return A, rng.standard_normal((r, m)), rng.standard_normal((m, r)), 1j * np.logspace(-3, 5, k)


def median_time(fn, args, repeat):
    times = timeit.repeat(lambda: fn(*args), number=1, repeat=repeat)
    return float(np.median(times))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args(argv)
    if _kernels is None:
        print("compiled kernels not available; only the fallback can be timed")
    print(f"{'r':>4} {'m':>3} {'shifts':>7} {'python [ms]':>12} {'compiled [ms]':>14} {'speedup':>8} {'max dev':>9}")
    for r, m, k in [(2, 1, 20), (4, 2, 100), (8, 2, 400), (16, 3, 400), (32, 2, 1000)]:
        data = case(r, m, k)
        t_py = median_time(_kernels_py.resolvent_batch, data, args.repeat)
        if _kernels is None:
            print(f"{r:>4} {m:>3} {k:>7} {1e3 * t_py:>12.3f} {'-':>14} {'-':>8} {'-':>9}")
            continue
        t_c = median_time(_kernels.resolvent_batch, data, args.repeat)
        dev = max(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300)
                  for a, b in zip(_kernels.resolvent_batch(*data), _kernels_py.resolvent_batch(*data)))
        print(f"{r:>4} {m:>3} {k:>7} {1e3 * t_py:>12.3f} {1e3 * t_c:>14.3f} {t_py / t_c:>8.2f} {dev:>9.1e}")


if __name__ == "__main__":
    main()
