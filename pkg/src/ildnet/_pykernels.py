"""Pure-numpy reference kernels.

Every function has a compiled twin in ``_ckernels.pyx`` with the same
signature and the same per-element accumulation order, so both backends
produce bit-identical results.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, stride, pad):
    """(N, C, H, W) -> (N*OH*OW, C*kh*kw), column order (c, i, j)."""
    n, c, h, w = x.shape
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, c * kh * kw)


def col2im(cols, x_shape, kh, kw, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add columns back onto the image."""
    n, c, h, w = x_shape
    oh = conv_out_size(h, kh, stride, pad)
    ow = conv_out_size(w, kw, stride, pad)
    d = cols.reshape(n, oh, ow, c, kh, kw)
    dx = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += d[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        dx = dx[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(dx)


def maxpool_forward(x, size, stride):
    """Returns (out, argmax) with argmax the flat in-window index of the first max."""
    n, c, h, w = x.shape
    oh = (h - size) // stride + 1
    ow = (w - size) // stride + 1
    win = sliding_window_view(x, (size, size), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    win = win.reshape(n, c, oh, ow, size * size)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg.astype(np.intp)


def maxpool_backward(dout, arg, x_shape, size, stride):
    n, c, h, w = x_shape
    _, _, oh, ow = dout.shape
    dx = np.zeros(x_shape, dtype=dout.dtype)
    oy = np.arange(oh)[:, None] * stride + arg // size
    ox = np.arange(ow)[None, :] * stride + arg % size
    ni = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    np.add.at(dx, (np.broadcast_to(ni, arg.shape), np.broadcast_to(ci, arg.shape), oy, ox), dout)
    return dx
