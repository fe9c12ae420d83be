# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled strided-window attention kernels.

Same contract as ``_window_py``; inputs must be C-contiguous float64.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def window_dot(const double[:, :, ::1] a, const double[:, :, ::1] b,
               Py_ssize_t stride, Py_ssize_t left, Py_ssize_t right):
    cdef Py_ssize_t G = a.shape[0], T = a.shape[1], D = a.shape[2]
    cdef Py_ssize_t n = left + right + 1
    out_arr = np.zeros((G, T, n), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t g, t, j, s, k
    cdef double acc
    with nogil:
        for g in range(G):
            for t in range(T):
                for j in range(n):
                    s = t + (j - left) * stride
                    if s < 0 or s >= T:
                        continue
                    acc = 0.0
                    for k in range(D):
                        acc = acc + a[g, t, k] * b[g, s, k]
                    out[g, t, j] = acc
    return out_arr


def window_mix(const double[:, :, ::1] w, const double[:, :, ::1] b,
               Py_ssize_t stride, Py_ssize_t left, Py_ssize_t right):
    cdef Py_ssize_t G = w.shape[0], T = w.shape[1], D = b.shape[2]
    cdef Py_ssize_t n = left + right + 1
    out_arr = np.zeros((G, T, D), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t g, t, j, s, k
    cdef double wt
    with nogil:
        for g in range(G):
            for t in range(T):
                for j in range(n):
                    s = t + (j - left) * stride
                    if s < 0 or s >= T:
                        continue
                    wt = w[g, t, j]
                    for k in range(D):
                        out[g, t, k] += wt * b[g, s, k]
    return out_arr


def window_mix_t(const double[:, :, ::1] w, const double[:, :, ::1] a,
                 Py_ssize_t stride, Py_ssize_t left, Py_ssize_t right):
    cdef Py_ssize_t G = w.shape[0], T = w.shape[1], D = a.shape[2]
    cdef Py_ssize_t n = left + right + 1
    out_arr = np.zeros((G, T, D), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t g, t, j, s, k
    cdef double wt
    with nogil:
        for g in range(G):
            for t in range(T):
                for j in range(n):
                    s = t + (j - left) * stride
                    if s < 0 or s >= T:
                        continue
                    wt = w[g, t, j]
                    for k in range(D):
                        out[g, s, k] += wt * a[g, t, k]
    return out_arr
