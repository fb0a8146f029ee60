"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback is loaded. ``WAVESCORE_KERNELS=python`` forces the fallback.
"""
import os

import numpy as np

from . import _pykernels

_python = _pykernels

if os.environ.get("WAVESCORE_KERNELS", "").lower() == "python":
    _compiled = None
else:
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _python


def _prep(a):
    a = np.asarray(a)
    if a.dtype not in (np.float32, np.float64):
        a = a.astype(np.float64)
    return np.ascontiguousarray(a)


def im2col(x, k, backend=None):
    """Gather k x k zero-padded patches: (B, C, H, W) -> (B, C*k*k, H*W)."""
    impl = _select(backend)
    return impl.im2col(_prep(x), int(k))


def col2im(cols, shape, k, backend=None):
    """Scatter-add patches back; adjoint of :func:`im2col`."""
    impl = _select(backend)
    B, C, H, W = shape
    return impl.col2im(_prep(cols), B, C, H, W, int(k))


def haar_analysis(x, backend=None):
    """(n, 2M, 2N) -> (details (n, 3, M, N), low (n, M, N))."""
    return _select(backend).haar_analysis(_prep(x))


def haar_synthesis(det, low, backend=None):
    det, low = _prep(det), _prep(low)
    if det.dtype != low.dtype:
        dt = np.result_type(det, low)
        det, low = det.astype(dt), low.astype(dt)
    return _select(backend).haar_synthesis(det, low)


def _select(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _python
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown backend {backend!r}")
