# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


def conv_out_size(Py_ssize_t n, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    return (n + 2 * pad - k) // stride + 1


def im2col(floating[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t b, ci, i, j, y, xx, row, col, iy, ix
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((n * oh * ow, c * kh * kw), dtype=dtype)
    cdef floating[:, ::1] out = out_arr
    with nogil:
        for b in range(n):
            for y in range(oh):
                for xx in range(ow):
                    row = (b * oh + y) * ow + xx
                    col = 0
                    for ci in range(c):
                        for i in range(kh):
                            iy = y * stride + i - pad
                            for j in range(kw):
                                ix = xx * stride + j - pad
                                if 0 <= iy < h and 0 <= ix < w:
                                    out[row, col] = x[b, ci, iy, ix]
                                else:
                                    out[row, col] = 0
                                col = col + 1
    return out_arr


def col2im(floating[:, ::1] cols, tuple x_shape, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t b, ci, i, j, y, xx, row, col, iy, ix
    dtype = np.float32 if floating is float else np.float64
    dx_arr = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = dx_arr
    # loop order keeps the (i, j) accumulation order of the numpy twin
    with nogil:
        for b in range(n):
            for ci in range(c):
                for i in range(kh):
                    for j in range(kw):
                        col = (ci * kh + i) * kw + j
                        for y in range(oh):
                            iy = y * stride + i
                            for xx in range(ow):
                                ix = xx * stride + j
                                row = (b * oh + y) * ow + xx
                                dx[b, ci, iy, ix] += cols[row, col]
    if pad:
        return np.ascontiguousarray(dx_arr[:, :, pad:pad + h, pad:pad + w])
    return dx_arr


def maxpool_forward(floating[:, :, :, ::1] x, Py_ssize_t size, Py_ssize_t stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h - size) // stride + 1
    cdef Py_ssize_t ow = (w - size) // stride + 1
    cdef Py_ssize_t b, ci, y, xx, i, j, best_k
    cdef floating best, v
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((n, c, oh, ow), dtype=dtype)
    arg_arr = np.empty((n, c, oh, ow), dtype=np.intp)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t[:, :, :, ::1] arg = arg_arr
    with nogil:
        for b in range(n):
            for ci in range(c):
                for y in range(oh):
                    for xx in range(ow):
                        best = x[b, ci, y * stride, xx * stride]
                        best_k = 0
                        for i in range(size):
                            for j in range(size):
                                v = x[b, ci, y * stride + i, xx * stride + j]
                                if v > best:
                                    best = v
                                    best_k = i * size + j
                        out[b, ci, y, xx] = best
                        arg[b, ci, y, xx] = best_k
    return out_arr, arg_arr


def maxpool_backward(floating[:, :, :, ::1] dout, Py_ssize_t[:, :, :, ::1] arg, tuple x_shape,
                     Py_ssize_t size, Py_ssize_t stride):
    cdef Py_ssize_t n = dout.shape[0], c = dout.shape[1], oh = dout.shape[2], ow = dout.shape[3]
    cdef Py_ssize_t b, ci, y, xx, k
    dtype = np.float32 if floating is float else np.float64
    dx_arr = np.zeros(x_shape, dtype=dtype)
    cdef floating[:, :, :, ::1] dx = dx_arr
    with nogil:
        for b in range(n):
            for ci in range(c):
                for y in range(oh):
                    for xx in range(ow):
                        k = arg[b, ci, y, xx]
                        dx[b, ci, y * stride + k // size, xx * stride + k % size] += dout[b, ci, y, xx]
    return dx_arr
