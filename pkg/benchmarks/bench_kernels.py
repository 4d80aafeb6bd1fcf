"""Time the compiled kernels against the pure-Python fallback.

Run with ``python3 benchmarks/bench_kernels.py``; prints one line per
kernel and problem size. The compiled extension must be built
(``pip install -e . --no-build-isolation``).
"""

import argparse
import timeit

import numpy as np

from bvmem import _core_py

try:
    from bvmem import _core
except ImportError:  # pragma: no cover - depends on the build
    _core = None


def problem(T, d, K=4, seed=0):
    rng = np.random.default_rng(seed)
    omega = rng.uniform(0.05, 0.3, d)
    B = np.eye(d) * 0.5 + rng.uniform(0, 0.05, (d, d))
    A = np.eye(d) * 0.2 + rng.uniform(0, 0.05, (d, d))
    x = np.ascontiguousarray(rng.lognormal(0.0, 0.5, (T, d)))
    mu1 = x.mean(axis=0)
    labels = rng.integers(0, K, T).astype(np.intp)
    locs = rng.normal(0.0, 0.2, (K, d))
    chol = np.ascontiguousarray(np.broadcast_to(np.eye(d) * 2.0, (K, d, d)).copy())
    return omega, B, A, x, np.log(x), mu1, labels, locs, chol


def best_of(fn, repeat=5, number=None):
    timer = timeit.Timer(fn)
    if number is None:
        number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=number)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[1000, 3000, 10000])
    parser.add_argument("--dims", type=int, nargs="+", default=[2, 3])
    args = parser.parse_args(argv)
    if _core is None:
        print("compiled extension not available; only the fallback can be timed")
    print(f"{'kernel':<16}{'T':>7}{'d':>3}{'python [ms]':>14}{'compiled [ms]':>15}{'speed-up':>10}")
    for d in args.dims:
        for T in args.sizes:
            omega, B, A, x, logx, mu1, labels, locs, chol = problem(T, d)
            out = np.empty_like(x)
            cases = {
                "mean_recursion": lambda m: m.mean_recursion(omega, B, A, x, mu1, out),
                "eta_quadratic": lambda m: m.eta_quadratic(omega, B, A, x, logx, mu1, labels, locs, chol),
            }
            for name, call in cases.items():
                t_py = best_of(lambda: call(_core_py), repeat=3)
                if _core is None:
                    print(f"{name:<16}{T:>7}{d:>3}{1e3 * t_py:>14.3f}{'-':>15}{'-':>10}")
                    continue
                t_c = best_of(lambda: call(_core))
                print(f"{name:<16}{T:>7}{d:>3}{1e3 * t_py:>14.3f}{1e3 * t_c:>15.4f}{t_py / t_c:>9.1f}x")


if __name__ == "__main__":
    main()
