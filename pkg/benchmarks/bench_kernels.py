"""Compare the compiled and pure-numpy versions of the two hot kernels.

    python benchmarks/bench_kernels.py [--repeat N]

Compiled kernels are warmed up once before timing, so the numbers exclude
JIT compilation. Both variants are checked for identical output.
"""

import argparse
import timeit

import numpy as np

from gaitaae import _accel, evaluation, histogram


def bench(label, func, repeat):
    times = timeit.repeat(func, number=1, repeat=repeat)
    best = min(times)
    print(f"  {label:<8} best {best * 1e3:8.3f} ms   median {np.median(times) * 1e3:8.3f} ms")
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    if not _accel.HAVE_NUMBA:
        print("numba is not installed; only the numpy variants can run")
    rng = np.random.default_rng(0)

    for n in (6_000, 60_000):
        pts = rng.normal(size=(n, 3)) * [0.2, 0.15, 0.5]
        cyl = histogram.fit_cylinder(histogram.PointCloud(pts))
        ref = histogram.bin_points(pts, cyl, 16, 16, use_numba=False)
        print(f"bin_points, {n} points, 16x16")
        t_np = bench("numpy", lambda: histogram.bin_points(pts, cyl, 16, 16, use_numba=False), args.repeat)
        if _accel.HAVE_NUMBA:
            assert np.array_equal(histogram.bin_points(pts, cyl, 16, 16, use_numba=True), ref)
            t_nb = bench("numba", lambda: histogram.bin_points(pts, cyl, 16, 16, use_numba=True), args.repeat)
            print(f"  speed-up x{t_np / t_nb:.1f}")

    for n in (1_000, 100_000):
        labels = rng.integers(0, 2, n)
        scored = evaluation.ScoredSet(np.round(rng.normal(size=n) + labels, 3), labels)
        ref = evaluation.roc_counts(scored, use_numba=False)
        print(f"roc_counts, {n} scores")
        t_np = bench("numpy", lambda: evaluation.roc_counts(scored, use_numba=False), args.repeat)
        if _accel.HAVE_NUMBA:
            got = evaluation.roc_counts(scored, use_numba=True)
            assert all(np.array_equal(a, b) for a, b in zip(got, ref))
            t_nb = bench("numba", lambda: evaluation.roc_counts(scored, use_numba=True), args.repeat)
            print(f"  speed-up x{t_np / t_nb:.1f}")


if __name__ == "__main__":
    main()
