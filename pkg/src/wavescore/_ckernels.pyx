# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: patch gather/scatter for same-padded convolution and
the 2x2 Haar butterfly.

Every routine accumulates in the same order as its counterpart in
``_pykernels`` so both backends give bit-identical results.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


def im2col(floating[:, :, :, ::1] x, Py_ssize_t k):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t p = (k - 1) // 2
    cdef Py_ssize_t b, c, ki, kj, i, j, row, si, j0, j1
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((B, C * k * k, H * W), dtype=dtype)
    cdef floating[:, :, ::1] cols = out
    with nogil:
        for b in range(B):
            for c in range(C):
                for ki in range(k):
                    for kj in range(k):
                        row = (c * k + ki) * k + kj
                        j0 = p - kj if kj < p else 0
                        j1 = W + p - kj if kj > p else W
                        for i in range(H):
                            si = i + ki - p
                            if si < 0 or si >= H:
                                continue
                            for j in range(j0, j1):
                                cols[b, row, i * W + j] = x[b, c, si, j + kj - p]
    return out


def col2im(floating[:, :, ::1] cols, Py_ssize_t B, Py_ssize_t C,
           Py_ssize_t H, Py_ssize_t W, Py_ssize_t k):
    cdef Py_ssize_t p = (k - 1) // 2
    cdef Py_ssize_t b, c, ki, kj, i, j, row, si, j0, j1
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((B, C, H, W), dtype=dtype)
    cdef floating[:, :, :, ::1] x = out
    with nogil:
        for b in range(B):
            for c in range(C):
                for ki in range(k):
                    for kj in range(k):
                        row = (c * k + ki) * k + kj
                        j0 = p - kj if kj < p else 0
                        j1 = W + p - kj if kj > p else W
                        for i in range(H):
                            si = i + ki - p
                            if si < 0 or si >= H:
                                continue
                            for j in range(j0, j1):
                                x[b, c, si, j + kj - p] += cols[b, row, i * W + j]
    return out


def haar_analysis(floating[:, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], M = x.shape[1] // 2, N = x.shape[2] // 2
    cdef Py_ssize_t t, i, j
    cdef floating a, b, c, d
    dtype = np.float32 if floating is float else np.float64
    low_arr = np.empty((n, M, N), dtype=dtype)
    det_arr = np.empty((n, 3, M, N), dtype=dtype)
    cdef floating[:, :, ::1] low = low_arr
    cdef floating[:, :, :, ::1] det = det_arr
    with nogil:
        for t in range(n):
            for i in range(M):
                for j in range(N):
                    a = x[t, 2 * i, 2 * j]
                    b = x[t, 2 * i, 2 * j + 1]
                    c = x[t, 2 * i + 1, 2 * j]
                    d = x[t, 2 * i + 1, 2 * j + 1]
                    low[t, i, j] = (a + b + c + d) * 0.5
                    det[t, 0, i, j] = (a + b - c - d) * 0.5
                    det[t, 1, i, j] = (a - b + c - d) * 0.5
                    det[t, 2, i, j] = (a - b - c + d) * 0.5
    return det_arr, low_arr


def haar_synthesis(floating[:, :, :, ::1] det, floating[:, :, ::1] low):
    cdef Py_ssize_t n = low.shape[0], M = low.shape[1], N = low.shape[2]
    cdef Py_ssize_t t, i, j
    cdef floating l, h, v, d
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((n, 2 * M, 2 * N), dtype=dtype)
    cdef floating[:, :, ::1] x = out
    with nogil:
        for t in range(n):
            for i in range(M):
                for j in range(N):
                    l = low[t, i, j]
                    h = det[t, 0, i, j]
                    v = det[t, 1, i, j]
                    d = det[t, 2, i, j]
                    x[t, 2 * i, 2 * j] = (l + h + v + d) * 0.5
                    x[t, 2 * i, 2 * j + 1] = (l + h - v - d) * 0.5
                    x[t, 2 * i + 1, 2 * j] = (l - h + v - d) * 0.5
                    x[t, 2 * i + 1, 2 * j + 1] = (l - h - v + d) * 0.5
    return out
