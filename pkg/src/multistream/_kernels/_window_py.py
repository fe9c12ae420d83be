"""NumPy implementation of the strided-window attention kernels.

All kernels take row groups of shape ``(G, T, d)`` (``G`` flattens batch and
heads) and window weights of shape ``(G, T, N)`` with ``N = left + right + 1``.
Window slot ``j`` for frame ``t`` refers to frame ``t + (j - left) * stride``;
slots falling outside ``[0, T)`` are skipped.
"""

import numpy as np


def _valid_range(T, off):
    return max(0, -off), min(T, T - off)


def window_dot(a, b, stride, left, right):
    G, T, _ = a.shape
    n = left + right + 1
    out = np.zeros((G, T, n), dtype=np.float64)
    for j in range(n):
        off = (j - left) * stride
        t0, t1 = _valid_range(T, off)
        if t0 >= t1:
            continue
        out[:, t0:t1, j] = np.einsum("gtd,gtd->gt", a[:, t0:t1], b[:, t0 + off:t1 + off])
    return out


def window_mix(w, b, stride, left, right):
    G, T, _ = w.shape
    out = np.zeros((G, T, b.shape[2]), dtype=np.float64)
    for j in range(left + right + 1):
        off = (j - left) * stride
        t0, t1 = _valid_range(T, off)
        if t0 >= t1:
            continue
        out[:, t0:t1] += w[:, t0:t1, j, None] * b[:, t0 + off:t1 + off]
    return out


def window_mix_t(w, a, stride, left, right):
    G, T, _ = w.shape
    out = np.zeros((G, T, a.shape[2]), dtype=np.float64)
    for j in range(left + right + 1):
        off = (j - left) * stride
        t0, t1 = _valid_range(T, off)
        if t0 >= t1:
            continue
        out[:, t0 + off:t1 + off] += w[:, t0:t1, j, None] * a[:, t0:t1]
    return out
