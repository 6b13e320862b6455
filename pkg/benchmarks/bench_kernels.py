"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--sizes 1000,10000,100000] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from sqlearn import _backend


def cases(u, p=0.9, mu=0.1):
    n = u.size
    k = int(np.ceil(p * n))
    t = float(np.sort(u)[k - 1])
    cap = 1.0 / (n * (1.0 - p))
    return {
        "kth_smallest": lambda m: m.kth_smallest(u, k),
        "tail_sums": lambda m: m.tail_sums(u, t),
        "capped_simplex_weights": lambda m: m.capped_simplex_weights(u, cap, mu),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="1000,10000,100000")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = _backend.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the numpy fallback is timed")
    rng = np.random.default_rng(0)
    names = sorted(backends)
    print(f"{'kernel':<24}{'n':>8}" + "".join(f"{b + ' (ms)':>16}" for b in names) + f"{'speedup':>10}")
    for n in (int(s) for s in args.sizes.split(",")):
        u = rng.standard_normal(n)
        for label, fn in cases(u).items():
            ms = {}
            for b in names:
                number = max(1, 20000 // n)
                best = min(timeit.repeat(lambda: fn(backends[b]), number=number, repeat=args.repeat))
                ms[b] = 1e3 * best / number
            speed = f"{ms['python'] / ms['cython']:.1f}x" if "cython" in ms else "-"
            print(f"{label:<24}{n:>8}" + "".join(f"{ms[b]:>16.4f}" for b in names) + f"{speed:>10}")


if __name__ == "__main__":
    main()
