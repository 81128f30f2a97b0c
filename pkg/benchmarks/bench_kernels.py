"""Benchmark the compiled assembly kernel against the numpy fallback.

Run with:  python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from adaptcdr import kernels


def time_fn(fn, A, B, repeats=7):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(A, B)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    print(f"active backend: {kernels.IMPL}")
    print(f"{'cells':>8} {'quad':>5} {'ndof':>5} {'numpy [ms]':>11} "
          f"{'active [ms]':>12} {'speedup':>8}")
    for cells, nq, nd in ((256, 16, 4), (4096, 16, 4), (4096, 16, 9),
                          (16384, 16, 9), (16384, 36, 9)):
        A = rng.standard_normal((cells, nq, nd))
        B = rng.standard_normal((cells, nq, nd))
        ref = kernels.pairwise_accumulate_numpy(A, B)
        out = kernels.pairwise_accumulate(A, B)
        assert np.allclose(ref, out, atol=1e-12), "backend results differ"
        t_np = time_fn(kernels.pairwise_accumulate_numpy, A, B)
        t_ac = time_fn(kernels.pairwise_accumulate, A, B)
        print(f"{cells:>8} {nq:>5} {nd:>5} {1e3 * t_np:>11.3f} "
              f"{1e3 * t_ac:>12.3f} {t_np / t_ac:>8.2f}")


if __name__ == "__main__":
    main()
