# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled dense kernels for the training hot path.

Same interface as feddesk._kernels_py; plain C loops over float64
memoryviews, released from the GIL so client episodes can run on real
threads.  Loop order is fixed (reductions use four sequential accumulator
lanes), so results are deterministic run to run.
"""

import numpy as np

cimport numpy as cnp

NAME = "compiled"


def affine_nt(const double[:, ::1] x, const double[:, ::1] w, const double[::1] b):
    """x @ w.T + b for x (m, k), w (n, k), b (n,)."""
    cdef Py_ssize_t m = x.shape[0], k = x.shape[1], n = w.shape[0]
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    # transposing w once makes the inner accumulation contiguous over j
    wt_arr = np.empty((k, n), dtype=np.float64)
    cdef double[:, ::1] wt = wt_arr
    cdef Py_ssize_t i, j, p
    cdef double xv
    cdef double* orow
    cdef const double* wrow
    with nogil:
        for j in range(n):
            for p in range(k):
                wt[p, j] = w[j, p]
        for i in range(m):
            orow = &out[i, 0]
            for j in range(n):
                orow[j] = b[j]
            for p in range(k):
                xv = x[i, p]
                wrow = &wt[p, 0]
                for j in range(n):
                    orow[j] += xv * wrow[j]
    return out_arr


def matmul_nn(const double[:, ::1] a, const double[:, ::1] b):
    """a @ b for a (m, k), b (k, n)."""
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    out_arr = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, p
    cdef double aval
    cdef double* orow
    cdef const double* brow
    with nogil:
        for i in range(m):
            orow = &out[i, 0]
            for p in range(k):
                aval = a[i, p]
                brow = &b[p, 0]
                for j in range(n):
                    orow[j] += aval * brow[j]
    return out_arr


def matmul_tn(const double[:, ::1] a, const double[:, ::1] b):
    """a.T @ b for a (k, m), b (k, n)."""
    cdef Py_ssize_t k = a.shape[0], m = a.shape[1], n = b.shape[1]
    out_arr = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, p
    cdef double aval
    cdef double* orow
    cdef const double* brow
    with nogil:
        for p in range(k):
            brow = &b[p, 0]
            for i in range(m):
                aval = a[p, i]
                orow = &out[i, 0]
                for j in range(n):
                    orow[j] += aval * brow[j]
    return out_arr


def relu(const double[:, ::1] x):
    cdef Py_ssize_t m = x.shape[0], n = x.shape[1]
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(m):
            for j in range(n):
                out[i, j] = x[i, j] if x[i, j] > 0.0 else 0.0
    return out_arr


def relu_backward(const double[:, ::1] grad, const double[:, ::1] preact):
    """Mask grad where preact <= 0 (subgradient at 0 is 0)."""
    cdef Py_ssize_t m = grad.shape[0], n = grad.shape[1]
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(m):
            for j in range(n):
                out[i, j] = grad[i, j] if preact[i, j] > 0.0 else 0.0
    return out_arr


def colsum(const double[:, ::1] a):
    cdef Py_ssize_t m = a.shape[0], n = a.shape[1]
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(m):
            for j in range(n):
                out[j] += a[i, j]
    return out_arr


def sgd_update(double[::1] param, const double[::1] grad, double[::1] mom,
               double lr, double momentum, double weight_decay):
    """In-place classic momentum step: buf = m*buf + (g + wd*p); p -= lr*buf."""
    cdef Py_ssize_t n = param.shape[0]
    cdef Py_ssize_t i
    cdef double g
    with nogil:
        for i in range(n):
            g = grad[i] + weight_decay * param[i]
            mom[i] = momentum * mom[i] + g
            param[i] = param[i] - lr * mom[i]
