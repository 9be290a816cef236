"""Compare the compiled and pure-Python kernel backends.

Times pairwise_cov and pairwise_cov_grads over a grid of problem sizes and
checks that the two implementations agree to machine precision.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from dynmgp import _kernels_py

try:
    from dynmgp import _kernels_cy
except ImportError:
    _kernels_cy = None


def _inputs(n, m, d, rng):
    xa = rng.uniform(-3, 3, (n, d))
    xb = rng.uniform(-3, 3, (m, d))
    aL, aR = rng.uniform(0.3, 2.0, n), rng.uniform(0.3, 2.0, m)
    thL, thR = rng.uniform(0.3, 3.0, (n, d)), rng.uniform(0.3, 3.0, (m, d))
    return xa, xb, aL, thL, aR, thR


def _time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if _kernels_cy is None:
        print("compiled backend unavailable; timing pure Python only")
    rng = np.random.default_rng(0)
    header = f"{'n x m x d':>14} {'kernel':>10} {'python (ms)':>12} " \
             f"{'compiled (ms)':>14} {'speedup':>8} {'max |diff|':>11}"
    print(header)
    print("-" * len(header))
    for n, m, d in [(50, 50, 1), (130, 130, 1), (260, 130, 2),
                    (400, 400, 1), (650, 650, 1)]:
        xa, xb, aL, thL, aR, thR = _inputs(n, m, d, rng)
        K = np.zeros((n, m))
        G = np.zeros((n, m))

        for name in ("cov", "grads"):
            if name == "cov":
                py = lambda: _kernels_py.pairwise_cov(xa, xb, aL, thL, aR, thR)
                cy = (None if _kernels_cy is None else
                      lambda: _kernels_cy.pairwise_cov(xa, xb, aL, thL, aR, thR))
            else:
                K = _kernels_py.pairwise_cov(xa, xb, aL, thL, aR, thR)
                py = lambda: _kernels_py.pairwise_cov_grads(
                    xa, xb, aL, thL, aR, thR, K, G)
                cy = (None if _kernels_cy is None else
                      lambda: _kernels_cy.pairwise_cov_grads(
                          xa, xb, aL, thL, aR, thR, K, G))
            t_py = _time(py, args.repeats)
            if cy is None:
                print(f"{f'{n}x{m}x{d}':>14} {name:>10} {t_py*1e3:12.2f} "
                      f"{'-':>14} {'-':>8} {'-':>11}")
                continue
            t_cy = _time(cy, args.repeats)
            r_py, r_cy = py(), cy()
            if not isinstance(r_py, tuple):
                r_py, r_cy = (r_py,), (r_cy,)
            diff = max(float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
                       for a, b in zip(r_py, r_cy))
            print(f"{f'{n}x{m}x{d}':>14} {name:>10} {t_py*1e3:12.2f} "
                  f"{t_cy*1e3:14.2f} {t_py/t_cy:8.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()
