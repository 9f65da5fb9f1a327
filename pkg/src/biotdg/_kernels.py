"""Hot sparse kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``BIOTDG_DISABLE_NUMBA`` is unset (or ``0``). Both paths are always
importable as ``*_numba`` / ``*_numpy`` so they can be compared directly.
"""
from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("BIOTDG_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED


# ---------------------------------------------------------------- numpy path


def csr_matvec_numpy(indptr, indices, data, x):
    nrows = indptr.shape[0] - 1
    y = np.zeros(nrows, dtype=np.result_type(data, x))
    if data.size == 0:
        return y
    prod = data * x[indices]
    row = np.repeat(np.arange(nrows), np.diff(indptr))
    np.add.at(y, row, prod)
    return y


def coo_to_csr_numpy(rows, cols, vals, nrows, ncols):
    """Sort triplets by (row, col) and sum duplicates; stable, deterministic."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    if rows.size == 0:
        return np.zeros(nrows + 1, np.int64), np.zeros(0, np.int64), np.zeros(0)
    key = rows * ncols + cols
    order = np.argsort(key, kind="stable")
    key = key[order]
    vals = vals[order]
    first = np.ones(key.size, dtype=bool)
    first[1:] = key[1:] != key[:-1]
    starts = np.flatnonzero(first)
    summed = np.add.reduceat(vals, starts)
    ukey = key[starts]
    urow = ukey // ncols
    indices = ukey - urow * ncols
    indptr = np.zeros(nrows + 1, dtype=np.int64)
    np.add.at(indptr, urow + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, indices, summed


def scatter_local_numpy(row_dofs, col_dofs, local):
    """Expand per-element dense blocks into COO triplets.

    ``row_dofs`` is (ne, nr), ``col_dofs`` (ne, nc), ``local`` (ne, nr, nc).
    """
    ne, nr = row_dofs.shape
    nc = col_dofs.shape[1]
    rows = np.broadcast_to(row_dofs[:, :, None], (ne, nr, nc)).reshape(-1)
    cols = np.broadcast_to(col_dofs[:, None, :], (ne, nr, nc)).reshape(-1)
    return rows.astype(np.int64), cols.astype(np.int64), np.ascontiguousarray(local, dtype=np.float64).reshape(-1)


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def csr_matvec_numba(indptr, indices, data, x):
        nrows = indptr.shape[0] - 1
        y = np.zeros(nrows)
        for i in range(nrows):
            acc = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                acc += data[k] * x[indices[k]]
            y[i] = acc
        return y

    @numba.njit(cache=True)
    def _coo_to_csr_numba(rows, cols, vals, nrows, ncols):
        nnz = rows.shape[0]
        # counting sort by row keeps insertion order within a row
        counts = np.zeros(nrows + 1, np.int64)
        for k in range(nnz):
            counts[rows[k] + 1] += 1
        for i in range(nrows):
            counts[i + 1] += counts[i]
        pos = counts[:-1].copy()
        bcols = np.empty(nnz, np.int64)
        bvals = np.empty(nnz)
        for k in range(nnz):
            p = pos[rows[k]]
            bcols[p] = cols[k]
            bvals[p] = vals[k]
            pos[rows[k]] += 1
        indptr = np.zeros(nrows + 1, np.int64)
        indices = np.empty(nnz, np.int64)
        data = np.empty(nnz)
        out = 0
        for i in range(nrows):
            lo = counts[i]
            hi = counts[i + 1]
            seg = np.argsort(bcols[lo:hi], kind="mergesort")
            last = -1
            for s in range(seg.shape[0]):
                k = lo + seg[s]
                c = bcols[k]
                if c == last:
                    data[out - 1] += bvals[k]
                else:
                    indices[out] = c
                    data[out] = bvals[k]
                    out += 1
                    last = c
            indptr[i + 1] = out
        return indptr, indices[:out].copy(), data[:out].copy()

    def coo_to_csr_numba(rows, cols, vals, nrows, ncols):
        return _coo_to_csr_numba(
            np.ascontiguousarray(rows, dtype=np.int64),
            np.ascontiguousarray(cols, dtype=np.int64),
            np.ascontiguousarray(vals, dtype=np.float64),
            int(nrows),
            int(ncols),
        )

    @numba.njit(cache=True)
    def _scatter_local_numba(row_dofs, col_dofs, local):
        ne, nr = row_dofs.shape
        nc = col_dofs.shape[1]
        n = ne * nr * nc
        rows = np.empty(n, np.int64)
        cols = np.empty(n, np.int64)
        vals = np.empty(n)
        k = 0
        for e in range(ne):
            for a in range(nr):
                for b in range(nc):
                    rows[k] = row_dofs[e, a]
                    cols[k] = col_dofs[e, b]
                    vals[k] = local[e, a, b]
                    k += 1
        return rows, cols, vals

    def scatter_local_numba(row_dofs, col_dofs, local):
        return _scatter_local_numba(
            np.ascontiguousarray(row_dofs, dtype=np.int64),
            np.ascontiguousarray(col_dofs, dtype=np.int64),
            np.ascontiguousarray(local, dtype=np.float64),
        )

else:  # pragma: no cover
    csr_matvec_numba = csr_matvec_numpy
    coo_to_csr_numba = coo_to_csr_numpy
    scatter_local_numba = scatter_local_numpy


if USE_NUMBA:
    def csr_matvec(indptr, indices, data, x):
        return csr_matvec_numba(indptr, indices, np.asarray(data, np.float64), np.asarray(x, np.float64))

    coo_to_csr = coo_to_csr_numba
    scatter_local = scatter_local_numba
else:
    csr_matvec = csr_matvec_numpy
    coo_to_csr = coo_to_csr_numpy
    scatter_local = scatter_local_numpy


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
