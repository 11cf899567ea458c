"""Benchmark the compiled kernels against the NumPy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py

Covers the two hot paths: cyclic Jacobi eigendecomposition (dominates
whitening fit time) and top-k selection under the (score desc, id asc)
order (dominates retrieval post-processing on large galleries). Scoring
itself stays a BLAS matrix-vector product in both backends and is shown
for scale.
"""

import time

import numpy as np

from crossview._kernels import load_backend


def timed(fn, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_jacobi(backend, n, seed=0):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((n, n))
    m = (m + m.T) / 2.0
    threshold = 1e-11 * float(np.linalg.norm(m))

    def run():
        a = np.ascontiguousarray(m.copy())
        v = np.eye(n)
        backend.jacobi_cycle(a, v, threshold, 60)

    return timed(run, repeats=2 if n >= 256 else 3)


def bench_topk(backend, n, k, seed=0):
    rng = np.random.default_rng(seed)
    scores = rng.standard_normal(n)
    rank = rng.permutation(n).astype(np.int64)
    return timed(lambda: backend.topk_select(scores, rank, k))


def bench_gemv(n, d, seed=0):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, d))
    q = rng.standard_normal(d)
    return timed(lambda: g @ q)


def main():
    backends = {"python": load_backend("python")}
    try:
        backends["native"] = load_backend("native")
    except ImportError:
        print("compiled kernels not built; benchmarking the fallback only\n")

    rows = []
    for n in (64, 128, 256):
        timings = {name: bench_jacobi(b, n) for name, b in backends.items()}
        rows.append((f"jacobi eigensolve {n}x{n}", timings))
    for n, k in ((10_000, 10), (100_000, 10), (100_000, 1000)):
        timings = {name: bench_topk(b, n, k) for name, b in backends.items()}
        rows.append((f"topk select n={n:>6} k={k:<4}", timings))

    names = list(backends)
    header = f"{'kernel':<32}" + "".join(f"{n:>12}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for label, timings in rows:
        line = f"{label:<32}" + "".join(f"{timings[n] * 1e3:>10.2f}ms" for n in names)
        if len(names) == 2:
            line += f"{timings['python'] / timings['native']:>9.1f}x"
        print(line)

    print()
    for n, d in ((1_000, 128), (100_000, 768)):
        print(f"scoring gemv {n}x{d} (shared BLAS path): {bench_gemv(n, d) * 1e3:.2f}ms")


if __name__ == "__main__":
    main()
