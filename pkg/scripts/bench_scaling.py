"""Timing sweep for the two hot paths: exact energy-distance top-k and ROC-AUC.

    python scripts/bench_scaling.py [--seed 0] [--repeats 3]

Prints one line per configuration with the best-of-N wall time.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from diler_eval.classification import roc_auc
from diler_eval.retrieval import AtomEmbeddingSet, DistanceParams, EnergyIndex


def best_of(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def corpus(rng: np.random.Generator, n: int, max_m: int, d: int) -> list[AtomEmbeddingSet]:
    return [AtomEmbeddingSet(f"m{i:05d}", rng.normal(size=(int(rng.integers(1, max_m + 1)), d))) for i in range(n)]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)

    print("energy-distance full scan (k=10)")
    for n, max_m, d in [(100, 32, 64), (888, 64, 64), (888, 128, 64), (2000, 128, 64)]:
        entries = corpus(rng, n, max_m, d)
        q = AtomEmbeddingSet("q", rng.normal(size=(max_m, d)))
        for params in (DistanceParams(0.5), DistanceParams(0.5, unbiased=True)):
            index = EnergyIndex(entries, params)
            t = best_of(lambda: index.top_k(q, 10), args.repeats)
            tag = "unbiased" if params.unbiased else "V-stat"
            print(f"  n={n:5d} M<={max_m:3d} d={d} {tag:8s} {t:7.3f}s")

    print("ROC-AUC")
    for n in (10**3, 10**4, 10**5, 10**6):
        scores, labels = rng.random(n), rng.integers(0, 2, n)
        print(f"  n={n:8d} {best_of(lambda: roc_auc(scores, labels), args.repeats):7.4f}s")


if __name__ == "__main__":
    main()
