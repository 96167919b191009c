# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sparse kernels.

Each output row is reduced over its CSR entries in storage order, so the
result does not depend on threading.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def csr_matmul(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
               const double[::1] data, const double[:, ::1] dense):
    """Return ``A @ dense`` for the CSR matrix ``A = (data, indices, indptr)``."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = dense.shape[1]
    cdef Py_ssize_t i, jj, j, k
    cdef double a
    out = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for jj in range(indptr[i], indptr[i + 1]):
                j = indices[jj]
                a = data[jj]
                for k in range(d):
                    o[i, k] += a * dense[j, k]
    return out


def row_pair_dots(const double[:, ::1] z, const cnp.int64_t[::1] left,
                  const cnp.int64_t[::1] right):
    """Return ``sum(z[left] * z[right], axis=1)`` without materialising gathers."""
    cdef Py_ssize_t m = left.shape[0]
    cdef Py_ssize_t d = z.shape[1]
    cdef Py_ssize_t t, k, a, b
    cdef double s
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for t in range(m):
            a = left[t]
            b = right[t]
            s = 0.0
            for k in range(d):
                s += z[a, k] * z[b, k]
            o[t] = s
    return out
