"""Times the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the best wall time of each backend and the
speed-up. Inputs mirror what training and evaluation feed the kernels:
small K x K matching problems, per-diagram IoU matrices and per-sample
Kendall tau over a handful of diagrams.
"""
import argparse
import timeit

import numpy as np

from seqground import _pykernels

try:
    from seqground import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def workloads(rng):
    costs = [rng.uniform(size=(k, k)) for k in rng.integers(2, 6, size=2000)]
    big_costs = [rng.uniform(size=(60, 60)) for _ in range(20)]
    spans_a = np.sort(rng.uniform(size=(200, 2)), 1)
    spans_b = np.sort(rng.uniform(size=(200, 2)), 1)
    taus = [(rng.uniform(size=6), rng.uniform(size=6)) for _ in range(2000)]
    overlap = [np.sort(rng.uniform(size=(6, 2)), 1) for _ in range(2000)]
    return {
        "linear_assignment K<=5 x2000": lambda m: [m.linear_assignment(c) for c in costs],
        "linear_assignment 60x60 x20": lambda m: [m.linear_assignment(c) for c in big_costs],
        "interval_giou 200x200": lambda m: m.interval_giou(spans_a, spans_b),
        "interval_iou 200x200": lambda m: m.interval_iou(spans_a, spans_b),
        "kendall_tau_b n=6 x2000": lambda m: [m.kendall_tau_b(x, y) for x, y in taus],
        "mean_pairwise_intersection M=6 x2000": lambda m: [m.mean_pairwise_intersection(s) for s in overlap],
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    jobs = workloads(np.random.default_rng(0))
    print(f"{'kernel':40s} {'python ms':>10s} {'cython ms':>10s} {'speed-up':>9s}")
    for name, job in jobs.items():
        py = min(timeit.repeat(lambda: job(_pykernels), number=1, repeat=args.repeat)) * 1e3
        if _ckernels is None:
            print(f"{name:40s} {py:10.2f} {'n/a':>10s}")
            continue
        cy = min(timeit.repeat(lambda: job(_ckernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:40s} {py:10.2f} {cy:10.2f} {py / cy:8.1f}x")


if __name__ == "__main__":
    main()
