# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: fused Gram assembly and Khatri-Rao products.

Inputs are C-contiguous float64 arrays; the Python wrapper in
``_backend`` takes care of the conversion.
"""

import numpy as np
from libc.math cimport exp, sqrt


def rbf_cross_gram(const double[:, ::1] a, const double[:, ::1] b, double lengthscale):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], d = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double s, diff
    cdef double scale = 1.0 / (2.0 * lengthscale * lengthscale)
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                s = 0.0
                for k in range(d):
                    diff = a[i, k] - b[j, k]
                    s = s + diff * diff
                o[i, j] = exp(-s * scale)
    return out


def rbf_gram(const double[:, ::1] a, double lengthscale):
    cdef Py_ssize_t n = a.shape[0], d = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double s, diff, v
    cdef double scale = 1.0 / (2.0 * lengthscale * lengthscale)
    out = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            o[i, i] = 1.0
            for j in range(i + 1, n):
                s = 0.0
                for k in range(d):
                    diff = a[i, k] - a[j, k]
                    s = s + diff * diff
                v = exp(-s * scale)
                o[i, j] = v
                o[j, i] = v
    return out


def delta_cross_gram(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], d = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double v
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                v = 1.0
                for k in range(d):
                    if a[i, k] != b[j, k]:
                        v = 0.0
                        break
                o[i, j] = v
    return out


def khatri_rao_columnwise(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], n = a.shape[1], p = b.shape[0]
    cdef Py_ssize_t i, k, j
    cdef double aij
    out = np.empty((m * p, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(m):
            for k in range(p):
                for j in range(n):
                    o[i * p + k, j] = a[i, j] * b[k, j]
    return out


def face_splitting(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1], p = b.shape[1]
    cdef Py_ssize_t r, i, k
    cdef double ari
    out = np.empty((n, m * p), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for r in range(n):
            for i in range(m):
                ari = a[r, i]
                for k in range(p):
                    o[r, i * p + k] = ari * b[r, k]
    return out


def pairwise_distances(const double[:, ::1] a):
    cdef Py_ssize_t n = a.shape[0], d = a.shape[1]
    cdef Py_ssize_t i, j, k, t = 0
    cdef double s, diff
    out = np.empty(n * (n - 1) // 2, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                s = 0.0
                for k in range(d):
                    diff = a[i, k] - a[j, k]
                    s = s + diff * diff
                o[t] = sqrt(s)
                t = t + 1
    return out
