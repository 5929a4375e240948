"""Benchmark the numba kernels against their pure-numpy fallbacks.

Usage::

    python3 benchmarks/bench_kernels.py [--n 20000] [--repeats 3]

Prints one table row per kernel with timings for both backends and the
speedup.  The numba path needs a warm-up call per kernel so the JIT
compile does not pollute the measurement; run with ``EVCOPULA_NUMBA=0``
to check the fallback only (numba rows are then skipped).
"""

import argparse
import time

import numpy as np

from evcopula import _kernels as kn


def _time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20_000, help="rows per operand")
    ap.add_argument("--kde-queries", type=int, default=2_000)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    x = np.round(rng.normal(size=args.n), 2)
    y = np.round(0.4 * x + rng.normal(size=args.n), 2)
    pts = rng.normal(size=(args.n, 3))
    qs = rng.normal(size=(args.kde_queries, 3))

    cases = [
        ("kendall_tau", lambda nb: kn.kendall_tau(x, y, use_numba=nb)),
        ("kde_logpdf", lambda nb: kn.kde_logpdf(pts, qs, 0.25, use_numba=nb)),
        ("nearest_distances", lambda nb: kn.nearest_distances(qs, pts, use_numba=nb)),
    ]

    print(f"n = {args.n}, kde queries = {args.kde_queries}, best of {args.repeats}")
    print(f"{'kernel':<20} {'numpy':>10} {'numba':>10} {'speedup':>9}")
    for name, fn in cases:
        t_np = _time(lambda: fn(False), args.repeats)
        if kn.using_numba():
            fn(True)  # warm-up: exclude JIT compilation
            t_nb = _time(lambda: fn(True), args.repeats)
            print(f"{name:<20} {t_np:>9.3f}s {t_nb:>9.3f}s {t_np / t_nb:>8.1f}x")
        else:
            print(f"{name:<20} {t_np:>9.3f}s {'-':>10} {'-':>9}")


if __name__ == "__main__":
    main()
