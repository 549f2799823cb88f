"""Time the numba kernels against their numpy counterparts.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Compilation happens once before timing; the numbers are per call.
"""

import argparse
import time

import numpy as np

from artifact import _kernels as K


def _time(fn, args, repeat):
    fn(*args)  # warm-up (and JIT compile)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    # TPE scoring: 24 candidates against ~250 kernels in 4 dimensions
    d, k = 4, 250
    centers = rng.random((k, d))
    parzen = (rng.random((24, d)), centers, np.full((k, d), 0.12), np.full(k, -np.log(k)), np.zeros(d), np.ones(d))
    # oscillator transient: 200k samples of a noisy sine
    t = np.linspace(0.0, 1e-2, 200_000)
    y = 2.5 + 0.3 * np.sin(2 * np.pi * 3e3 * t) + 0.01 * rng.standard_normal(t.size)
    return {
        "parzen_logpdf": parzen,
        "rising_crossings": (t, y, 2.5),
        "minmax_downsample": (t, y, 1000),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<20}{'numpy (ms)':>12}{'numba (ms)':>12}{'speed-up':>10}")
    for name, kargs in cases(rng).items():
        a = _time(getattr(K, f"{name}_numpy"), kargs, args.repeat)
        b = _time(getattr(K, f"{name}_numba"), kargs, args.repeat)
        print(f"{name:<20}{a * 1e3:>12.3f}{b * 1e3:>12.3f}{a / b:>9.1f}x")


if __name__ == "__main__":
    main()
