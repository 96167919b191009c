"""Hot numerical kernels with a compiled backend and a NumPy/SciPy fallback.

The compiled module ``graphunlearn._spmm`` is used when it was built and
``GRAPHUNLEARN_PURE`` is unset; otherwise the fallback below is selected at
import time. Both backends reduce each output row in CSR storage order.
"""
from __future__ import annotations

import os

import numpy as np
from scipy.sparse import csr_matrix


def _py_csr_matmul(indptr, indices, data, dense):
    n = len(indptr) - 1
    a = csr_matrix((data, indices, indptr), shape=(n, dense.shape[0]))
    return np.asarray(a @ dense)


def _py_row_pair_dots(z, left, right):
    return np.einsum("ij,ij->i", z[left], z[right])


py_csr_matmul = _py_csr_matmul
py_row_pair_dots = _py_row_pair_dots

BACKEND = "python"
csr_matmul = _py_csr_matmul
row_pair_dots = _py_row_pair_dots

if not os.environ.get("GRAPHUNLEARN_PURE"):
    try:
        from graphunlearn import _spmm
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "cython"

        def csr_matmul(indptr, indices, data, dense):  # noqa: F811
            return _spmm.csr_matmul(indptr, indices, data, np.ascontiguousarray(dense, dtype=np.float64))

        def row_pair_dots(z, left, right):  # noqa: F811
            return _spmm.row_pair_dots(np.ascontiguousarray(z, dtype=np.float64),
                                       np.ascontiguousarray(left, dtype=np.int64),
                                       np.ascontiguousarray(right, dtype=np.int64))
