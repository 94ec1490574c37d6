# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled distance kernels.

Every sum is accumulated in double precision regardless of the input
dtype, using four interleaved partial sums combined in a fixed order so
results are deterministic for a given input. Inputs are validated by the
Python wrappers in ``clan.numerics``.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport sqrt, INFINITY

cnp.import_array()


cdef inline double _sqdist(const floating* a, const floating* b, Py_ssize_t q) noexcept nogil:
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0, d
    cdef Py_ssize_t k = 0
    while k + 4 <= q:
        d = <double>a[k] - <double>b[k]
        s0 += d * d
        d = <double>a[k + 1] - <double>b[k + 1]
        s1 += d * d
        d = <double>a[k + 2] - <double>b[k + 2]
        s2 += d * d
        d = <double>a[k + 3] - <double>b[k + 3]
        s3 += d * d
        k += 4
    while k < q:
        d = <double>a[k] - <double>b[k]
        s0 += d * d
        k += 1
    return (s0 + s1) + (s2 + s3)


cdef inline double _unit_sqdist(const floating* a, double ia, const floating* b, double ib,
                               Py_ssize_t q) noexcept nogil:
    # squared distance between a/|a| and b/|b| given the inverse norms
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0, d
    cdef Py_ssize_t k = 0
    while k + 4 <= q:
        d = <double>a[k] * ia - <double>b[k] * ib
        s0 += d * d
        d = <double>a[k + 1] * ia - <double>b[k + 1] * ib
        s1 += d * d
        d = <double>a[k + 2] * ia - <double>b[k + 2] * ib
        s2 += d * d
        d = <double>a[k + 3] * ia - <double>b[k + 3] * ib
        s3 += d * d
        k += 4
    while k < q:
        d = <double>a[k] * ia - <double>b[k] * ib
        s0 += d * d
        k += 1
    return (s0 + s1) + (s2 + s3)


cdef inline double _dot(const floating* a, const floating* b, Py_ssize_t q) noexcept nogil:
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t k = 0
    while k + 4 <= q:
        s0 += <double>a[k] * <double>b[k]
        s1 += <double>a[k + 1] * <double>b[k + 1]
        s2 += <double>a[k + 2] * <double>b[k + 2]
        s3 += <double>a[k + 3] * <double>b[k + 3]
        k += 4
    while k < q:
        s0 += <double>a[k] * <double>b[k]
        k += 1
    return (s0 + s1) + (s2 + s3)


cdef void _inv_norms(floating[:, ::1] x, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        out[i] = 1.0 / sqrt(_dot(&x[i, 0], &x[i, 0], x.shape[1]))


def sq_euclidean(floating[:, ::1] a, floating[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], q = a.shape[1]
    cdef Py_ssize_t i, j
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((n, m), dtype=dtype)
    cdef floating[:, ::1] o = out
    if q == 0 or n == 0 or m == 0:
        return out
    with nogil:
        for i in range(n):
            for j in range(m):
                o[i, j] = <floating>_sqdist(&a[i, 0], &b[j, 0], q)
    return out


def cosine(floating[:, ::1] a, floating[:, ::1] b):
    """1 - cos computed as half the squared distance of the unit rows."""
    cdef Py_ssize_t n = a.shape[0], m = b.shape[0], q = a.shape[1]
    cdef Py_ssize_t i, j
    cdef double d
    ia_arr = np.empty(n, dtype=np.float64)
    ib_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] ia = ia_arr, ib = ib_arr
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((n, m), dtype=dtype)
    cdef floating[:, ::1] o = out
    if n == 0 or m == 0:
        return out
    with nogil:
        _inv_norms(a, ia)
        _inv_norms(b, ib)
        for i in range(n):
            for j in range(m):
                d = 0.5 * _unit_sqdist(&a[i, 0], ia[i], &b[j, 0], ib[j], q)
                o[i, j] = <floating>(d if d < 2.0 else 2.0)
    return out


def min_sq_euclidean(floating[:, ::1] queries, floating[:, ::1] base):
    cdef Py_ssize_t n = queries.shape[0], m = base.shape[0], q = queries.shape[1]
    cdef Py_ssize_t i, j
    cdef double d, best
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    if n == 0:
        return out
    with nogil:
        for i in range(n):
            best = INFINITY
            for j in range(m):
                d = _sqdist(&queries[i, 0], &base[j, 0], q)
                if d < best:
                    best = d
            o[i] = best
    return out


def min_cosine(floating[:, ::1] queries, floating[:, ::1] base):
    cdef Py_ssize_t n = queries.shape[0], m = base.shape[0], q = queries.shape[1]
    cdef Py_ssize_t i, j
    cdef double d, best
    iq_arr = np.empty(n, dtype=np.float64)
    ib_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] iq = iq_arr, ib = ib_arr
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    if n == 0:
        return out
    with nogil:
        _inv_norms(queries, iq)
        _inv_norms(base, ib)
        for i in range(n):
            best = INFINITY
            for j in range(m):
                d = _unit_sqdist(&queries[i, 0], iq[i], &base[j, 0], ib[j], q)
                if d < best:
                    best = d
            best *= 0.5
            o[i] = best if best < 2.0 else 2.0
    return out
