# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot loops in :mod:`gwpk._pykernels`."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, cos, sin

cnp.import_array()

BACKEND = "cython"


def neighborhood_hits(qx, qy, cx, cy, double delta):
    cdef double[::1] x = np.ascontiguousarray(qx, dtype=np.float64)
    cdef double[::1] y = np.ascontiguousarray(qy, dtype=np.float64)
    cdef double[::1] ax = np.ascontiguousarray(cx, dtype=np.float64)
    cdef double[::1] ay = np.ascontiguousarray(cy, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], m = ax.shape[0], i, j
    out_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] out = out_arr
    cdef double r2, dxv, dyv
    for j in range(m):
        r2 = delta * sqrt(1.0 + ax[j] * ax[j] + ay[j] * ay[j])
        r2 = r2 * r2
        for i in range(n):
            if out[i]:
                continue
            dxv = x[i] - ax[j]
            dyv = y[i] - ay[j]
            if dxv * dxv + dyv * dyv < r2:
                out[i] = 1
    return out_arr.astype(bool)


def coo_matvec(rows, cols, vals, x, Py_ssize_t n_rows):
    cdef cnp.int64_t[::1] r = np.ascontiguousarray(rows, dtype=np.int64)
    cdef cnp.int64_t[::1] c = np.ascontiguousarray(cols, dtype=np.int64)
    cdef double complex[::1] v = np.ascontiguousarray(vals, dtype=np.complex128)
    cdef double complex[::1] xv = np.ascontiguousarray(x, dtype=np.complex128)
    y_arr = np.zeros(n_rows, dtype=np.complex128)
    cdef double complex[::1] y = y_arr
    cdef Py_ssize_t k
    for k in range(v.shape[0]):
        y[r[k]] += v[k] * xv[c[k]]
    return y_arr


def weyl_gather(table, double scale):
    cdef double complex[:, ::1] b = np.ascontiguousarray(table, dtype=np.complex128)
    cdef Py_ssize_t n = b.shape[1], i, j
    out_arr = np.empty((n, n), dtype=np.complex128)
    cdef double complex[:, ::1] out = out_arr
    for i in range(n):
        for j in range(n):
            out[i, j] = b[i + j, (i - j + n) % n] * scale
    return out_arr


def fio_sum(phase, sigma, fhat, double deta):
    cdef double[:, ::1] ph = np.ascontiguousarray(phase, dtype=np.float64)
    cdef double complex[:, ::1] sg = np.ascontiguousarray(sigma, dtype=np.complex128)
    cdef double complex[::1] fh = np.ascontiguousarray(fhat, dtype=np.complex128)
    cdef Py_ssize_t nx = ph.shape[0], ne = ph.shape[1], i, k
    out_arr = np.empty(nx, dtype=np.complex128)
    cdef double complex[::1] out = out_arr
    cdef double complex acc, e
    cdef double scale = deta / (2.0 * 3.141592653589793)
    for i in range(nx):
        acc = 0
        for k in range(ne):
            e = cos(ph[i, k]) + 1j * sin(ph[i, k])
            acc = acc + e * sg[i, k] * fh[k]
        out[i] = acc * scale
    return out_arr
