"""Compare the compiled and numpy kernel backends on edge-segment reductions.

Usage: python benchmarks/bench_kernels.py [--edges N] [--groups M] [--dim D] [--repeat R]
"""
import argparse
import timeit

import numpy as np

from skewdp.kernels import available_backends, get_backend


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--edges", type=int, default=200_000)
    p.add_argument("--groups", type=int, default=1_000)
    p.add_argument("--dim", type=int, default=5)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)

    rng = np.random.default_rng(0)
    groups = np.sort(rng.integers(args.groups, size=args.edges)).astype(np.int64)
    x = rng.standard_normal((args.edges, args.dim))
    w = rng.random(args.edges)
    y = rng.standard_normal(args.edges)

    results = {}
    for name in available_backends():
        impl = get_backend(name)
        cases = {
            "segment_sum": lambda: impl.segment_sum(groups, x, args.groups),
            "segment_gram": lambda: impl.segment_gram(groups, x, w, y, args.groups),
        }
        for case, fn in cases.items():
            fn()  # warm up
            best = min(timeit.repeat(fn, number=1, repeat=args.repeat))
            results[name, case] = best
            print(f"{name:>7} {case:<13} {best * 1e3:9.2f} ms")

    if ("cython", "segment_gram") in results:
        for case in ("segment_sum", "segment_gram"):
            speedup = results["python", case] / results["cython", case]
            print(f"speedup {case:<13} {speedup:9.2f}x")
        ref = get_backend("python").segment_gram(groups, x, w, y, args.groups)
        got = get_backend("cython").segment_gram(groups, x, w, y, args.groups)
        diff = max(float(np.abs(r - g).max()) for r, g in zip(ref, got))
        print(f"max abs difference (segment_gram): {diff:.2e}")


if __name__ == "__main__":
    main()
