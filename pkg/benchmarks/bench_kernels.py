"""Compare the compiled kernels with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]

Prints the best wall time per call for each kernel and backend, the speedup,
and the largest absolute difference between the two backends' outputs.
"""

import argparse
import timeit

import numpy as np

from chivi import kernels


def cases(rng):
    t = rng.normal(0.0, 5.0, 100_000)
    f = rng.normal(0.0, 1.0, (32, 100))
    counts = rng.poisson(2.0, 100).astype(float)
    return {
        "log_ndtr (1e5)": lambda b: kernels.log_ndtr(t, backend=b),
        "log_ndtr_and_ratio (1e5)": lambda b: kernels.log_ndtr_and_ratio(t, backend=b),
        "poisson_grid (32x100)": lambda b: kernels.poisson_grid(f, counts, 1.0, backend=b),
    }


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=5)
    args = p.parse_args(argv)
    if kernels.BACKEND != "cython":
        print("compiled extension not built; only the python backend is available")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'cython ms':>10s} {'python ms':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, fn in cases(rng).items():
        times = {}
        for b in ("cython", "python"):
            number = 10
            best = min(timeit.repeat(lambda: fn(b), number=number, repeat=args.repeats))
            times[b] = 1e3 * best / number
        diff = max_diff(fn("cython"), fn("python"))
        print(f"{name:28s} {times['cython']:10.3f} {times['python']:10.3f} "
              f"{times['python'] / times['cython']:8.1f} {diff:10.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
