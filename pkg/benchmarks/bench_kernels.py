#!/usr/bin/env python3
"""Benchmark the compiled kernels against the numpy fallback.

Times the two hot paths (top-k affinity selection and CG diffusion) on a
synthetic union graph, both at the raw-kernel level and through the full
propagation pipeline with the backend swapped in.

Usage: python benchmarks/bench_kernels.py [--nodes N] [--dims D] [--classes M]
"""

import argparse
import time

import numpy as np

import vlalign._kernels as kernels
from vlalign._kernels import py_backend
from vlalign.affinity import build_topk_affinity, normalize_symmetric
from vlalign.containers import EmbeddingSet
from vlalign.labelprop import propagate

try:
    from vlalign._kernels import _core
except ImportError:
    _core = None


def timeit(fn, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def swap_backend(impl):
    kernels.topk_rows = impl.topk_rows
    kernels.csr_matvec = impl.csr_matvec
    kernels.cg_diffusion_column = impl.cg_diffusion_column


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--nodes", type=int, default=4000)
    parser.add_argument("--dims", type=int, default=64)
    parser.add_argument("--classes", type=int, default=10)
    parser.add_argument("--k", type=int, default=20)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    data = rng.standard_normal((args.nodes, args.dims))
    data /= np.linalg.norm(data, axis=1, keepdims=True)
    L = EmbeddingSet(data, [f"n{i}" for i in range(args.nodes)], unit_norm=True)

    backends = [("python", py_backend)]
    if _core is not None:
        backends.append(("compiled", _core))
    else:
        print("compiled extension not built; benchmarking the fallback only")

    print(f"nodes={args.nodes} dims={args.dims} k={args.k} classes={args.classes}")
    print(f"{'backend':<10} {'topk_block':>12} {'affinity':>12} {'propagate':>12}")

    sims = data[:512] @ data.T
    sims[np.arange(512), np.arange(512)] = -np.inf

    results = {}
    for name, impl in backends:
        swap_backend(impl)
        t_topk = timeit(lambda: impl.topk_rows(sims, args.k))
        t_aff = timeit(lambda: build_topk_affinity(L, args.k))
        W = normalize_symmetric(build_topk_affinity(L, args.k))
        t_prop = timeit(
            lambda: propagate(W, args.classes, alpha=0.99, cg_tol=1e-6, cg_max_iter=400)
        )
        results[name] = (t_topk, t_aff, t_prop)
        print(f"{name:<10} {t_topk:>11.4f}s {t_aff:>11.4f}s {t_prop:>11.4f}s")

    if len(results) == 2:
        py, comp = results["python"], results["compiled"]
        print(
            f"{'speedup':<10} "
            f"{py[0] / comp[0]:>11.1f}x {py[1] / comp[1]:>11.1f}x {py[2] / comp[2]:>11.1f}x"
        )
    swap_backend(py_backend if kernels.BACKEND == "python" else (_core or py_backend))


if __name__ == "__main__":
    main()
