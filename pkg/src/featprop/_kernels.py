"""Sparse kernels used by every propagation step.

Two interchangeable backends are provided: numba-compiled loops and a
vectorised numpy path. Set ``FEATPROP_NO_NUMBA=1`` before import to force the
numpy path (numba missing has the same effect).
"""

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("FEATPROP_NO_NUMBA", "0") in ("", "0")


def csr_matmul_numpy(indptr, indices, data, M):
    """Return ``S @ M`` for CSR matrix ``S`` with ``len(indptr) - 1`` rows."""
    n = indptr.shape[0] - 1
    out = np.zeros((n, M.shape[1]), dtype=np.float64)
    if indices.shape[0] == 0:
        return out
    contrib = data[:, None] * M[indices]
    starts = indptr[:-1]
    nonempty = indptr[1:] > starts
    out[nonempty] = np.add.reduceat(contrib, starts[nonempty], axis=0)
    return out


def scatter_rows_numpy(index, E, n):
    """Return ``out`` with ``out[j] = sum(E[e] for e where index[e] == j)``."""
    out = np.zeros((n, E.shape[1]), dtype=np.float64)
    np.add.at(out, index, E)
    return out


if HAS_NUMBA:

    @njit(cache=True, nogil=True)
    def csr_matmul_numba(indptr, indices, data, M):
        n = indptr.shape[0] - 1
        k = M.shape[1]
        out = np.zeros((n, k), dtype=np.float64)
        for i in range(n):
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                a = data[p]
                for c in range(k):
                    out[i, c] += a * M[j, c]
        return out

    @njit(cache=True, nogil=True)
    def scatter_rows_numba(index, E, n):
        k = E.shape[1]
        out = np.zeros((n, k), dtype=np.float64)
        for e in range(index.shape[0]):
            j = index[e]
            for c in range(k):
                out[j, c] += E[e, c]
        return out

else:  # pragma: no cover
    csr_matmul_numba = csr_matmul_numpy
    scatter_rows_numba = scatter_rows_numpy


if USE_NUMBA:
    csr_matmul = csr_matmul_numba
    scatter_rows = scatter_rows_numba
    BACKEND = "numba"
else:
    csr_matmul = csr_matmul_numpy
    scatter_rows = scatter_rows_numpy
    BACKEND = "numpy"
