"""Timing comparison of the jitted kernels against their pure-numpy
fallbacks. Run:  python benchmarks/bench_kernels.py [--sizes 64 128 256]

The same dispatchers the package uses at runtime are exercised by flipping
CFSEG_NO_NUMBA, so the numbers reflect exactly what each path costs.
"""

import argparse
import os
import time

import numpy as np

from cfseg import accel, kernels


def ellipses_for(size):
    rng = np.random.default_rng(0)
    return np.array(
        [
            [0.52 * size, 0.28 * size, 0.23 * size, 0.13 * size],
            [0.52 * size, 0.72 * size, 0.23 * size, 0.13 * size],
        ]
    )


def bench(fn, repeats=30):
    fn()  # warmup / jit compile
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run(size):
    ells = ellipses_for(size)
    m_r, m_l, mask = kernels.lung_fields(size, size, ells, 0.5)
    grid = np.random.default_rng(1).standard_normal((9, 9))
    jitter = np.random.default_rng(2).integers(-1, 2, size=size)
    a = np.random.default_rng(3).integers(0, 3, size=(size, size)).astype(np.uint8)
    b = np.random.default_rng(4).integers(0, 3, size=(size, size)).astype(np.uint8)
    cut = int(0.7 * size)
    return {
        "lung_fields": lambda: kernels.lung_fields(size, size, ells, 0.5),
        "effusion_overlay": lambda: kernels.effusion_overlay(m_r, m_l, ells, 0.5, 0.62, 0.5),
        "value_noise": lambda: kernels.value_noise(size, size, grid),
        "clip_mask_rows": lambda: kernels.clip_mask_rows(mask, 1, cut, jitter),
        "overlap_counts": lambda: kernels.overlap_counts(a, b),
    }


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()

    if not accel.HAVE_NUMBA:
        print("numba unavailable; only the numpy path can be timed")

    print(f"{'kernel':18s} {'size':>5s} {'numba':>10s} {'numpy':>10s} {'speedup':>8s}")
    for size in args.sizes:
        fns = run(size)
        for name, fn in fns.items():
            os.environ.pop(accel.ENV_FLAG, None)
            t_nb = bench(fn, args.repeats) if accel.use_numba() else float("nan")
            os.environ[accel.ENV_FLAG] = "1"
            t_np = bench(fn, args.repeats)
            os.environ.pop(accel.ENV_FLAG, None)
            ratio = t_np / t_nb if t_nb == t_nb else float("nan")
            print(
                f"{name:18s} {size:5d} {t_nb * 1e6:9.1f}u {t_np * 1e6:9.1f}u {ratio:7.1f}x"
            )


if __name__ == "__main__":
    main()
