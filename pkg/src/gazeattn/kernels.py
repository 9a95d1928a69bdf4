"""Kernel backend selection.

The compiled ``_kernels`` extension is used when importable; otherwise the
numpy fallback in ``_kernels_py`` is used. Setting ``GAZEATTN_PURE_PYTHON=1``
forces the fallback. Both backends agree to floating-point summation order
(about 1e-12 relative) for convolutions and exactly for ``rank_counts``.
"""
import os

import numpy as np

from . import _kernels_py

if os.environ.get("GAZEATTN_PURE_PYTHON"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv2d_forward(x, w, b):
    """Same-padded stride-1 convolution, ``(N,H,W,Cin) x (kh,kw,Cin,Cout) -> (N,H,W,Cout)``."""
    return _impl.conv2d_forward(_c(x), _c(w), _c(b))


def conv2d_grad_input(dout, w):
    return _impl.conv2d_grad_input(_c(dout), _c(w))


def conv2d_grad_weight(x, dout, kh, kw):
    return _impl.conv2d_grad_weight(_c(x), _c(dout), int(kh), int(kw))


def rank_counts(pos, neg):
    return _impl.rank_counts(_c(pos), _c(neg))


def backends():
    """Map of available backend name -> module, used by tests and benchmarks."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels
        out["cython"] = _kernels
    except ImportError:
        pass
    return out
