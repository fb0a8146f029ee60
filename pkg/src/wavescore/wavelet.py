"""Orthonormal 2-D Haar analysis/synthesis and multi-level pyramids.

Arrays are laid out ``(..., C, H, W)``. A single analysis step maps an image
with one channel ``(..., 1, 2M, 2M)`` to a detail band ``(..., 3, M, M)``
ordered [horizontal, vertical, diagonal] and a low-pass band
``(..., 1, M, M)``. On each 2x2 block ``[[a, b], [c, d]]``::

    low = (a + b + c + d) / 2      horizontal = (a + b - c - d) / 2
    vertical = (a - b + c - d) / 2 diagonal = (a - b - c + d) / 2

The transform is orthonormal, so norms and inner products are preserved.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError, NumericError

__all__ = [
    "WaveletPyramid",
    "haar_analysis_step",
    "haar_synthesis_step",
    "build_pyramid",
    "collapse_pyramid",
]


def _as_float(x):
    x = np.asarray(x)
    if x.dtype == np.float32:
        return x
    return x.astype(np.float64, copy=False)


def haar_analysis_step(image):
    """One level of the Haar transform.

    Returns ``(details, low)``.
    """
    x = _as_float(image)
    if x.ndim < 3 or x.shape[-3] != 1:
        raise DimensionError(f"expected (..., 1, H, W) image, got shape {x.shape}")
    H, W = x.shape[-2:]
    if H % 2 or W % 2 or H == 0 or W == 0:
        raise DimensionError(f"side lengths must be even and positive, got {H}x{W}")
    if not np.all(np.isfinite(x)):
        raise NumericError("haar_analysis_step received non-finite entries")
    lead = x.shape[:-3]
    det, low = kernels.haar_analysis(x.reshape(-1, H, W))
    return (
        det.reshape(lead + (3, H // 2, W // 2)),
        low.reshape(lead + (1, H // 2, W // 2)),
    )


def haar_synthesis_step(details, low):
    """Inverse (and adjoint) of :func:`haar_analysis_step`."""
    det = _as_float(details)
    low = _as_float(low)
    if low.ndim < 3 or low.shape[-3] != 1:
        raise DimensionError(f"low-pass band must be (..., 1, M, M), got {low.shape}")
    if det.shape[-3:] != (3,) + low.shape[-2:] or det.shape[:-3] != low.shape[:-3]:
        raise DimensionError(
            f"detail band {det.shape} does not match low-pass band {low.shape}"
        )
    lead = low.shape[:-3]
    M, N = low.shape[-2:]
    x = kernels.haar_synthesis(det.reshape(-1, 3, M, N), low.reshape(-1, M, N))
    return x.reshape(lead + (1, 2 * M, 2 * N))


@dataclass
class WaveletPyramid:
    """Terminal low-pass band plus one detail band per scale.

    ``details[0]`` is scale j=1 (finest), ``details[-1]`` is scale J.
    """

    lowpass: np.ndarray
    details: list
    depth: int
    base_size: int

    def band(self, j):
        """Detail band at scale ``j`` (1-based)."""
        if not 1 <= j <= self.depth:
            raise IndexError(f"scale {j} outside 1..{self.depth}")
        return self.details[j - 1]

    def energy(self):
        total = np.sum(self.lowpass.astype(np.float64) ** 2)
        for d in self.details:
            total += np.sum(d.astype(np.float64) ** 2)
        return float(total)

    def coefficients(self):
        """All coefficients flattened in the order [lowpass, details J..1]."""
        lead = self.lowpass.shape[:-3]
        parts = [self.lowpass.reshape(lead + (-1,))]
        parts += [d.reshape(lead + (-1,)) for d in reversed(self.details)]
        return np.concatenate(parts, axis=-1)

    def copy(self):
        return WaveletPyramid(
            self.lowpass.copy(), [d.copy() for d in self.details], self.depth, self.base_size
        )


def build_pyramid(image, J):
    """Apply :func:`haar_analysis_step` ``J`` times to successive low-pass bands."""
    x = _as_float(image)
    if x.ndim == 2:
        x = x[None]
    J = int(J)
    if J < 1:
        raise DimensionError(f"depth must be >= 1, got {J}")
    if x.ndim < 3:
        raise DimensionError(f"expected (..., 1, N, N) image, got shape {x.shape}")
    N = x.shape[-1]
    if x.shape[-2] != N:
        raise DimensionError(f"image must be square, got {x.shape[-2:]}")
    if N % (2 ** J):
        raise DimensionError(f"side {N} is not divisible by 2**{J}")
    details = []
    low = x
    for _ in range(J):
        det, low = haar_analysis_step(low)
        details.append(det)
    return WaveletPyramid(lowpass=low, details=details, depth=J, base_size=N)


def collapse_pyramid(p):
    """Left inverse of :func:`build_pyramid`."""
    if len(p.details) != p.depth:
        raise DimensionError(f"pyramid has {len(p.details)} bands, depth says {p.depth}")
    low = p.lowpass
    for j in range(p.depth, 0, -1):
        det = p.details[j - 1]
        if det.shape[-2:] != low.shape[-2:]:
            raise DimensionError(
                f"band at scale {j} has size {det.shape[-2:]}, expected {low.shape[-2:]}"
            )
        low = haar_synthesis_step(det, low)
    if low.shape[-1] != p.base_size:
        raise DimensionError(f"collapsed side {low.shape[-1]} != base size {p.base_size}")
    return low
