"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from invlearn._kernels import available_backends, get_backend


def _sym(n, seed):
    a = np.random.default_rng(seed).standard_normal((n, n))
    return np.ascontiguousarray(a + a.T)


def bench_jacobi(backend, n, repeat):
    m = _sym(n, n)
    return min(timeit.repeat(lambda: backend.jacobi_eigh(m, 1e-12, 100), number=1, repeat=repeat))


def bench_prox(backend, n, repeat):
    rng = np.random.default_rng(n)
    v = rng.standard_normal(n)
    tau = np.full(n, 0.3)
    return min(timeit.repeat(lambda: backend.prox_power(v, tau, 1.5, 1e-12, 100), number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    names = available_backends()
    if "compiled" not in names:
        print("compiled backend not built; timing the fallback only")
    cases = [("jacobi_eigh", bench_jacobi, n) for n in (16, 32, 64)]
    cases += [("prox_power", bench_prox, n) for n in (1000, 10000, 100000)]
    print(f"{'kernel':<12} {'size':>7} " + " ".join(f"{b + ' [ms]':>14}" for b in names) + "   speedup")
    for label, fn, n in cases:
        times = {b: fn(get_backend(b), n, args.repeat) for b in names}
        speed = f"{times['python'] / times['compiled']:9.1f}x" if "compiled" in times else ""
        print(f"{label:<12} {n:>7} " + " ".join(f"{times[b] * 1e3:14.3f}" for b in names) + f" {speed}")


if __name__ == "__main__":
    main()
