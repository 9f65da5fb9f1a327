"""Compare the numba and numpy paths of the hot sparse kernels.

Usage: python3 benchmarks/bench_kernels.py [--n 128] [--repeat 5]

Times local-matrix scatter, COO -> CSR conversion and CSR mat-vec on the
displacement stiffness pattern of an n x n mesh. The numba timings exclude
the first (compiling) call.
"""
import argparse
import time

import numpy as np

from biotdg import _kernels as K


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    nc = args.n * args.n
    dofs = 8 * np.arange(nc, dtype=np.int64)[:, None] + np.arange(8)
    local = rng.standard_normal((nc, 8, 8))
    n_u = 8 * nc

    if not K.HAVE_NUMBA:
        print("numba is not importable; only the numpy path is timed")
    paths = {"numpy": (K.scatter_local_numpy, K.coo_to_csr_numpy, K.csr_matvec_numpy)}
    if K.HAVE_NUMBA:
        paths["numba"] = (K.scatter_local_numba, K.coo_to_csr_numba, K.csr_matvec_numba)
        # compile outside the timed region
        r, c, v = K.scatter_local_numba(dofs[:2], dofs[:2], local[:2])
        ip, ix, dt = K.coo_to_csr_numba(r, c, v, 16, 16)
        K.csr_matvec_numba(ip, ix, dt, np.ones(16))

    x = rng.standard_normal(n_u)
    results = {}
    for name, (scatter, to_csr, matvec) in paths.items():
        r, c, v = scatter(dofs, dofs, local)
        ip, ix, dt = to_csr(r, c, v, n_u, n_u)
        results[name] = (
            best_of(lambda: scatter(dofs, dofs, local), args.repeat),
            best_of(lambda: to_csr(r, c, v, n_u, n_u), args.repeat),
            best_of(lambda: matvec(ip, ix, dt, x), args.repeat),
            matvec(ip, ix, dt, x),
        )

    print(f"mesh {args.n} x {args.n}, n_u = {n_u}, nnz = {64 * nc}")
    print(f"{'kernel':<12}" + "".join(f"{p:>12}" for p in results))
    for i, label in enumerate(("scatter", "coo->csr", "spmv")):
        print(f"{label:<12}" + "".join(f"{results[p][i] * 1e3:>10.2f}ms" for p in results))
    if len(results) == 2:
        diff = np.max(np.abs(results["numba"][3] - results["numpy"][3]))
        print(f"max |spmv(numba) - spmv(numpy)| = {diff:.3e}")


if __name__ == "__main__":
    main()
