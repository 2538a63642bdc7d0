"""Kernel backend selected at import time.

The compiled extension ``_ckernels`` is used when it was built; otherwise
(or when ``ILDNET_PURE_PYTHON=1``) the numpy implementation is used.
"""
import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("ILDNET_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend forced")
    from . import _ckernels
except ImportError:
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

BACKEND = "cython" if _ckernels is not None else "python"
_impl = BACKENDS[BACKEND]


def get_backend(name):
    try:
        return BACKENDS[name]
    except KeyError:
        raise ImportError(f"kernel backend {name!r} is not available") from None


def _c(a):
    return np.ascontiguousarray(a)


conv_out_size = _pykernels.conv_out_size


def im2col(x, kh, kw, stride=1, pad=0):
    return _impl.im2col(_c(x), kh, kw, stride, pad)


def col2im(cols, x_shape, kh, kw, stride=1, pad=0):
    return _impl.col2im(_c(cols), tuple(x_shape), kh, kw, stride, pad)


def maxpool_forward(x, size, stride):
    return _impl.maxpool_forward(_c(x), size, stride)


def maxpool_backward(dout, arg, x_shape, size, stride):
    return _impl.maxpool_backward(_c(dout), _c(arg).astype(np.intp, copy=False), tuple(x_shape), size, stride)
