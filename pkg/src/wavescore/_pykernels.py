"""Pure-numpy kernels, the fallback for ``_ckernels``.

Accumulation order matches the compiled versions element for element.
"""
import numpy as np


def im2col(x, k):
    B, C, H, W = x.shape
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((B, C, k, k, H, W), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            cols[:, :, ki, kj] = xp[:, :, ki:ki + H, kj:kj + W]
    return cols.reshape(B, C * k * k, H * W)


def col2im(cols, B, C, H, W, k):
    p = (k - 1) // 2
    cols = cols.reshape(B, C, k, k, H, W)
    xp = np.zeros((B, C, H + 2 * p, W + 2 * p), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            xp[:, :, ki:ki + H, kj:kj + W] += cols[:, :, ki, kj]
    return np.ascontiguousarray(xp[:, :, p:p + H, p:p + W])


def haar_analysis(x):
    a = x[:, 0::2, 0::2]
    b = x[:, 0::2, 1::2]
    c = x[:, 1::2, 0::2]
    d = x[:, 1::2, 1::2]
    low = (a + b + c + d) * 0.5
    det = np.stack(
        [(a + b - c - d) * 0.5, (a - b + c - d) * 0.5, (a - b - c + d) * 0.5],
        axis=1,
    )
    return det, low


def haar_synthesis(det, low):
    n, M, N = low.shape
    h, v, d = det[:, 0], det[:, 1], det[:, 2]
    x = np.empty((n, 2 * M, 2 * N), dtype=low.dtype)
    x[:, 0::2, 0::2] = (low + h + v + d) * 0.5
    x[:, 0::2, 1::2] = (low + h - v - d) * 0.5
    x[:, 1::2, 0::2] = (low - h + v - d) * 0.5
    x[:, 1::2, 1::2] = (low - h - v + d) * 0.5
    return x
