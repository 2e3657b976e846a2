"""Time each kernel under the numba and numpy backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

The first numba call per kernel compiles (or loads the on-disk cache), so
a warm-up call is made before timing.
"""
import argparse
import time

import numpy as np

from dcc import _kernels


def cases(rng, scale):
    n = int(20000 * scale)
    m = int(60000 * scale)
    ii, jj = rng.integers(0, n, m), rng.integers(0, n, m)
    order = np.argsort(rng.random(m))
    a = np.full(20, 500)
    b = np.full(20, 500)
    li, lj = rng.integers(0, 2000, m), rng.integers(0, 2000, m)
    g = rng.normal(size=(m, 10))
    size = int(2_000_000 * scale)
    p, grad = rng.normal(size=size).astype(np.float32), rng.normal(size=size).astype(np.float32)
    mom, var = np.zeros(size, np.float32), np.zeros(size, np.float32)
    return {
        "connected_components": lambda: _kernels.connected_components(n, ii, jj),
        "kruskal": lambda: _kernels.kruskal(n, ii[order], jj[order]),
        "expected_mutual_info": lambda: _kernels.expected_mutual_info(a, b, int(a.sum())),
        "scatter_pairwise": lambda: _kernels.scatter_pairwise(2000, li, lj, g),
        "adam_update": lambda: _kernels.adam_update(p, grad, mom, var, 0.9, 0.99, 1e-3, 0.5, 1e-8),
    }


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--scale", type=float, default=1.0, help="problem size multiplier")
    args = parser.parse_args()
    backends = [False] + ([True] if _kernels._HAVE_NUMBA else [])
    results = {}
    for flag in backends:
        _kernels.USE_NUMBA = flag
        for name, fn in cases(np.random.default_rng(0), args.scale).items():
            results.setdefault(name, {})[flag] = best_of(fn, args.repeat)
    print(f"{'kernel':<24}{'numpy s':>12}{'numba s':>12}{'speedup':>10}")
    for name, r in results.items():
        nb = r.get(True, float("nan"))
        print(f"{name:<24}{r[False]:>12.4f}{nb:>12.4f}{r[False] / nb:>10.1f}")


if __name__ == "__main__":
    main()
