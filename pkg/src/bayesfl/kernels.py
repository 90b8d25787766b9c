"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise, or when the
environment variable ``BAYESFL_PURE_PYTHON`` is set to a non-empty value,
the numpy implementation is used. ``BACKEND`` names the active one.
"""

import os

import numpy as np

from . import _pykernels
from ._pykernels import LINEAR, SIGN, TANH, TANH_CLAMP

_compiled = None
if not os.environ.get("BAYESFL_PURE_PYTHON"):
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _pykernels

__all__ = [
    "BACKEND", "LINEAR", "SIGN", "TANH", "TANH_CLAMP",
    "available_backends", "row_sq_error", "separable_sum",
]


def available_backends():
    return ["cython", "python"] if _compiled is not None else ["python"]


def _module(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _pykernels
    if backend == "cython" and _compiled is not None:
        return _compiled
    raise ValueError(f"backend {backend!r} is not available")


def separable_sum(received, offset, scale, gain, kind, backend=None):
    received = np.ascontiguousarray(received, dtype=np.float64)
    if received.ndim != 2:
        raise ValueError(f"received must be 2-D (devices x coordinates), got {received.shape}")
    K, L = received.shape
    args = [np.ascontiguousarray(a, dtype=np.float64) for a in (offset, scale, gain)]
    kind = np.ascontiguousarray(kind, dtype=np.int8)
    if any(a.shape != (K,) for a in (*args, kind)):
        raise ValueError("per-device parameter arrays must have one entry per row")
    out = np.empty(L, dtype=np.float64)
    return _module(backend).separable_sum(received, *args, kind, out)


def row_sq_error(estimate, truth, width, backend=None):
    estimate = np.ascontiguousarray(estimate, dtype=np.float64).ravel()
    truth = np.ascontiguousarray(truth, dtype=np.float64).ravel()
    if estimate.shape != truth.shape or estimate.size % width:
        raise ValueError("estimate/truth must have equal length divisible by width")
    return _module(backend).row_sq_error(estimate, truth, int(width))
