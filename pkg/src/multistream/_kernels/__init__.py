"""Backend selection for the strided-window attention kernels.

The compiled extension is used when it imports cleanly; otherwise the NumPy
implementation is used. Setting ``MULTISTREAM_PURE_PYTHON=1`` forces the
NumPy path.
"""

import os

import numpy as np

from . import _window_py

_FORCE_PYTHON = os.environ.get("MULTISTREAM_PURE_PYTHON", "") not in ("", "0")

try:
    if _FORCE_PYTHON:
        raise ImportError("pure-python backend forced")
    from . import _window as _compiled
except ImportError:
    _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _window_py


def _prep(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def window_dot(a, b, stride, left, right):
    """``out[g, t, j] = a[g, t] . b[g, t + (j - left) * stride]``, zero off-range."""
    return _impl.window_dot(_prep(a), _prep(b), stride, left, right)


def window_mix(w, b, stride, left, right):
    """``out[g, t] = sum_j w[g, t, j] * b[g, t + (j - left) * stride]``."""
    return _impl.window_mix(_prep(w), _prep(b), stride, left, right)


def window_mix_t(w, a, stride, left, right):
    """Adjoint of ``window_mix`` with respect to its second argument."""
    return _impl.window_mix_t(_prep(w), _prep(a), stride, left, right)


def window_mask(T, stride, left, right):
    """Boolean ``(T, N)`` mask of window slots that land inside ``[0, T)``."""
    offs = (np.arange(left + right + 1) - left) * stride
    pos = np.arange(T)[:, None] + offs[None, :]
    return (pos >= 0) & (pos < T)


def implementations():
    """Return ``{name: module}`` for every available backend."""
    impls = {"python": _window_py}
    if _compiled is not None:
        impls["cython"] = _compiled
    return impls
