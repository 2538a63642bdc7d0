"""Layer descriptors and their forward/backward rules."""
from dataclasses import asdict, dataclass

import numpy as np

from .. import kernels
from ..errors import CompositionError


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 0
    in_channels: int = None
    kind = "conv"


@dataclass(frozen=True)
class ReLU:
    kind = "relu"


@dataclass(frozen=True)
class MaxPool:
    size: int = 2
    stride: int = None
    kind = "pool"

    @property
    def step(self):
        return self.size if self.stride is None else self.stride


@dataclass(frozen=True)
class FC:
    out_dim: int
    in_dim: int = None
    kind = "fc"


LAYER_TYPES = {"conv": Conv, "relu": ReLU, "pool": MaxPool, "fc": FC}


def layer_to_dict(layer):
    d = {"kind": layer.kind}
    d.update({k: v for k, v in asdict(layer).items() if v is not None})
    return d


def layer_from_dict(d):
    d = dict(d)
    kind = d.pop("kind")
    try:
        return LAYER_TYPES[kind](**d)
    except (KeyError, TypeError) as exc:
        raise CompositionError(f"bad layer descriptor {d!r} ({kind})") from exc


def output_shape(layer, name, shape):
    """Shape after ``layer`` given input ``shape`` (without batch axis)."""
    if layer.kind == "conv":
        if len(shape) != 3:
            raise CompositionError(f"{name}: convolution needs a C x H x W input, got {shape}")
        c, h, w = shape
        if layer.in_channels is not None and layer.in_channels != c:
            raise CompositionError(f"{name}: expects {layer.in_channels} input channels, got {c}")
        oh = kernels.conv_out_size(h, layer.kernel, layer.stride, layer.pad)
        ow = kernels.conv_out_size(w, layer.kernel, layer.stride, layer.pad)
        if oh < 1 or ow < 1:
            raise CompositionError(f"{name}: kernel {layer.kernel} does not fit input {h}x{w}")
        return (layer.out_channels, oh, ow)
    if layer.kind == "relu":
        return shape
    if layer.kind == "pool":
        if len(shape) != 3:
            raise CompositionError(f"{name}: max-pool needs a C x H x W input, got {shape}")
        c, h, w = shape
        oh = (h - layer.size) // layer.step + 1
        ow = (w - layer.size) // layer.step + 1
        if oh < 1 or ow < 1:
            raise CompositionError(f"{name}: pool {layer.size} does not fit input {h}x{w}")
        return (c, oh, ow)
    if layer.kind == "fc":
        n_in = int(np.prod(shape))
        if layer.in_dim is not None and layer.in_dim != n_in:
            raise CompositionError(f"{name}: expects {layer.in_dim} inputs, got {n_in}")
        return (layer.out_dim,)
    raise CompositionError(f"{name}: unknown layer kind {layer.kind!r}")


def param_shapes(layer, in_shape):
    if layer.kind == "conv":
        return {"W": (layer.out_channels, in_shape[0], layer.kernel, layer.kernel), "b": (layer.out_channels,)}
    if layer.kind == "fc":
        return {"W": (layer.out_dim, int(np.prod(in_shape))), "b": (layer.out_dim,)}
    return {}


def forward(layer, params, x):
    """Returns ``(out, aux)``; ``aux`` is whatever backward needs beyond ``x``."""
    if layer.kind == "conv":
        n = x.shape[0]
        W = params["W"]
        f, _, k, _ = W.shape
        cols = kernels.im2col(x, k, k, layer.stride, layer.pad)
        oh = kernels.conv_out_size(x.shape[2], k, layer.stride, layer.pad)
        ow = kernels.conv_out_size(x.shape[3], k, layer.stride, layer.pad)
        out = cols @ W.reshape(f, -1).T
        out += params["b"]
        return np.ascontiguousarray(out.reshape(n, oh, ow, f).transpose(0, 3, 1, 2)), cols
    if layer.kind == "relu":
        return np.maximum(x, 0), None
    if layer.kind == "pool":
        return kernels.maxpool_forward(x, layer.size, layer.step)
    if layer.kind == "fc":
        flat = x.reshape(x.shape[0], -1)
        return flat @ params["W"].T + params["b"], None
    raise CompositionError(f"unknown layer kind {layer.kind!r}")


def backward(layer, params, x, aux, dout, need_dx=True):
    """Returns ``(dx, grads)``; dx is None when ``need_dx`` is false."""
    if layer.kind == "conv":
        W = params["W"]
        f, c, k, _ = W.shape
        dmat = dout.transpose(0, 2, 3, 1).reshape(-1, f)
        grads = {"W": (dmat.T @ aux).reshape(W.shape), "b": dmat.sum(axis=0)}
        dx = None
        if need_dx:
            dx = kernels.col2im(dmat @ W.reshape(f, -1), x.shape, k, k, layer.stride, layer.pad)
        return dx, grads
    if layer.kind == "relu":
        return (dout * (x > 0) if need_dx else None), {}
    if layer.kind == "pool":
        return (kernels.maxpool_backward(dout, aux, x.shape, layer.size, layer.step) if need_dx else None), {}
    if layer.kind == "fc":
        flat = x.reshape(x.shape[0], -1)
        grads = {"W": dout.T @ flat, "b": dout.sum(axis=0)}
        return ((dout @ params["W"]).reshape(x.shape) if need_dx else None), grads
    raise CompositionError(f"unknown layer kind {layer.kind!r}")
