"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat N]

The first numba call (compilation, or cache load) is excluded from timing.
"""

import argparse
import timeit

import numpy as np

from rbrl._kernels import MIDPOINT, NUMBA_KERNELS, NUMPY_KERNELS, ORIGINAL


def cases(rng):
    T, E = 256, 8  # one default rollout
    rollout = (rng.normal(size=(T, E)), rng.normal(size=(T, E)), rng.normal(size=(T, E)),
               np.zeros((T, E)), (rng.random((T, E)) < 0.005).astype(float))
    r = rng.uniform(0, 1, 64)
    bounds = np.array([0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    return {
        "gae (256x8)": ("gae", rollout + (0.99, 0.95)),
        "discounted_returns (256x8)": ("discounted_returns", (rollout[0], rollout[4], 0.99)),
        "class_log_probs original (64x5)": ("class_log_probs", (r, bounds, 1.0, ORIGINAL)),
        "class_log_probs midpoint (64x5)": ("class_log_probs", (r, bounds, 1.0, MIDPOINT)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=2000)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':34} {'numpy us':>10} {'numba us':>10} {'speedup':>8}")
    for label, (name, a) in cases(rng).items():
        t_np = timeit.timeit(lambda: NUMPY_KERNELS[name](*a), number=args.repeat) / args.repeat * 1e6
        if NUMBA_KERNELS is None:
            print(f"{label:34} {t_np:10.2f} {'n/a':>10} {'':>8}")
            continue
        fn = NUMBA_KERNELS[name]
        fn(*a)  # compile
        t_nb = timeit.timeit(lambda: fn(*a), number=args.repeat) / args.repeat * 1e6
        print(f"{label:34} {t_np:10.2f} {t_nb:10.2f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
