"""Benchmark the jitted kernels against their pure-numpy fallbacks.

Usage:
    python3 benchmarks/bench_kernels.py [--repeat N]

Reports per-kernel timings for both implementations and the speedup. The
pipeline picks the implementation at import time: numba when available, or
numpy when ``DTCAV_DISABLE_NUMBA=1`` is set.
"""

import argparse
import time

import numpy as np

from dtcav import _kernels


def _time(fn, args, repeat):
    fn(*args)  # warm-up (includes JIT compilation for the numba variants)
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def bench_assign_points(repeat):
    rng = np.random.default_rng(0)
    points = np.ascontiguousarray(rng.standard_normal((20_000, 16)))
    centroids = np.ascontiguousarray(rng.standard_normal((40, 16)))
    return ("assign_points (20k x 16, k=40)", (points, centroids))


def bench_slic_assign(repeat):
    rng = np.random.default_rng(1)
    image = rng.random((348, 348))
    k = 5
    S = np.sqrt(image.size / k)
    centers = np.ascontiguousarray(
        np.stack([rng.random(k), rng.uniform(0, 347, k), rng.uniform(0, 347, k)], axis=1)
    )
    return ("slic_assign (348x348, k=5)", (image, centers, int(2 * S), 0.001))


def bench_logistic_gd(repeat):
    rng = np.random.default_rng(2)
    n, d = 600, 64
    X = np.ascontiguousarray(rng.standard_normal((n, d)))
    y = np.where(X[:, 0] > 0, 1.0, -1.0)
    smax = np.linalg.norm(X, 2)
    lr = 1.0 / (smax * smax / (4 * n) + 1e-3)
    return ("logistic_gd (600 x 64)", (X, np.ascontiguousarray(X.T), y, 1e-3, lr, 10_000, 1e-6))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    pairs = {
        "assign_points": (bench_assign_points, _kernels.assign_points_numpy),
        "slic_assign": (bench_slic_assign, _kernels.slic_assign_numpy),
        "logistic_gd": (bench_logistic_gd, _kernels.logistic_gd_numpy),
    }
    if not _kernels.HAVE_NUMBA:
        print("numba unavailable or disabled; benchmarking the numpy path only\n")

    print(f"{'kernel':<28} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for name, (setup, numpy_fn) in pairs.items():
        label, bench_args = setup(args.repeat)
        t_numpy = _time(numpy_fn, bench_args, args.repeat)
        if _kernels.HAVE_NUMBA:
            numba_fn = getattr(_kernels, f"{name}_numba")
            t_numba = _time(numba_fn, bench_args, args.repeat)
            print(f"{label:<28} {t_numpy * 1e3:>8.2f}ms {t_numba * 1e3:>8.2f}ms {t_numpy / t_numba:>7.1f}x")
        else:
            print(f"{label:<28} {t_numpy * 1e3:>8.2f}ms {'-':>10} {'-':>8}")


if __name__ == "__main__":
    main()
