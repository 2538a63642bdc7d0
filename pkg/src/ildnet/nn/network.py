"""Network specification, parameters, forward/backward passes and checkpoints."""
from dataclasses import dataclass, field

import numpy as np

from .. import container, rng as rngmod
from ..errors import CompositionError, StateError
from . import layers as L

NUM_OUTPUTS = 4


@dataclass
class NetworkSpec:
    input_shape: tuple
    layers: list
    names: list = field(default=None)

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if self.names is None:
            counts, names = {}, []
            for layer in self.layers:
                counts[layer.kind] = counts.get(layer.kind, 0) + 1
                names.append(f"{layer.kind}{counts[layer.kind]}")
            self.names = names
        if len(self.names) != len(self.layers) or len(set(self.names)) != len(self.names):
            raise CompositionError("layer names must be unique, one per layer")

    def shapes(self):
        """Per-layer output shapes (no batch axis); raises on the first mismatch."""
        shape, out = self.input_shape, []
        for layer, name in zip(self.layers, self.names):
            shape = L.output_shape(layer, name, shape)
            out.append(shape)
        return out

    @property
    def output_dim(self):
        return int(np.prod(self.shapes()[-1]))

    def to_dict(self):
        return {"input_shape": list(self.input_shape), "names": list(self.names),
                "layers": [L.layer_to_dict(layer) for layer in self.layers]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["input_shape"]), [L.layer_from_dict(x) for x in d["layers"]], list(d["names"]))


def desk_spec(input_size=64, in_channels=3, outputs=NUM_OUTPUTS):
    """Default desk-scale architecture (three conv blocks, two FC layers)."""
    return NetworkSpec((in_channels, input_size, input_size), [
        L.Conv(16, 5, pad=2), L.ReLU(), L.MaxPool(2),
        L.Conv(32, 5, pad=2), L.ReLU(), L.MaxPool(2),
        L.Conv(64, 3, pad=1), L.ReLU(), L.MaxPool(2),
        L.FC(128), L.ReLU(), L.FC(outputs),
    ])


class Network:
    """A NetworkSpec plus its parameter arrays.

    ``version`` is bumped by every in-place parameter update so that stale
    forward caches can be detected by :func:`backward`.
    """

    def __init__(self, spec, params, dtype=np.float64):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.params = [{k: np.asarray(v, dtype=self.dtype) for k, v in p.items()} for p in params]
        self.version = 0

    def astype(self, dtype):
        return Network(self.spec, self.params, dtype)

    def copy(self):
        return Network(self.spec, [{k: v.copy() for k, v in p.items()} for p in self.params], self.dtype)

    def flat_params(self):
        """Iterate ``(layer_index, key, array)`` in layer order."""
        for i, p in enumerate(self.params):
            for key in ("W", "b"):
                if key in p:
                    yield i, key, p[key]

    def layer_index(self, name):
        try:
            return self.spec.names.index(name)
        except ValueError:
            raise KeyError(name) from None


def init_network(spec, seed, dtype=np.float64):
    """Centered uniform init with bound sqrt(6 / fan_in); zero biases."""
    rng = rngmod.stream(seed, "init")
    in_shape = spec.input_shape
    params = []
    for layer, out_shape in zip(spec.layers, spec.shapes()):
        shapes = L.param_shapes(layer, in_shape)
        p = {}
        if shapes:
            fan_in = int(np.prod(shapes["W"][1:]))
            bound = np.sqrt(6.0 / fan_in)
            p["W"] = rng.uniform(-bound, bound, size=shapes["W"])
            p["b"] = np.zeros(shapes["b"])
        params.append(p)
        in_shape = out_shape
    return Network(spec, params, dtype)


@dataclass
class ForwardCache:
    inputs: list
    aux: list
    outputs: dict
    version: int
    net_id: int


def forward(net, batch, keep=True):
    """Raw scores ``(N, outputs)`` and the activation cache.

    With ``keep=False`` no cache is built (inference only).
    """
    x = np.asarray(batch, dtype=net.dtype)
    if x.ndim != len(net.spec.input_shape) + 1 or x.shape[1:] != net.spec.input_shape:
        raise CompositionError(
            f"{net.spec.names[0]}: input shape {x.shape[1:]} does not match {net.spec.input_shape}")
    inputs, aux, outputs = [], [], {}
    for layer, name, p in zip(net.spec.layers, net.spec.names, net.params):
        out, a = L.forward(layer, p, x)
        if keep:
            inputs.append(x)
            aux.append(a)
            outputs[name] = out
        x = out
    cache = ForwardCache(inputs, aux, outputs, net.version, id(net)) if keep else None
    return x, cache


def predict(net, batch, batch_size=64):
    out = []
    for i in range(0, len(batch), batch_size):
        out.append(forward(net, batch[i:i + batch_size], keep=False)[0])
    return np.concatenate(out) if out else np.zeros((0, net.spec.output_dim), net.dtype)


def backward(net, cache, grad_out):
    """Parameter gradients (list aligned with ``net.params``)."""
    if cache is None or not cache.inputs:
        raise StateError("backward needs the cache of a forward pass (none given)")
    if cache.net_id != id(net) or cache.version != net.version:
        raise StateError("forward cache is stale: parameters changed since the forward pass")
    d = np.asarray(grad_out, dtype=net.dtype)
    expected = cache.outputs[net.spec.names[-1]].shape
    if d.shape != expected:
        raise CompositionError(f"grad_out shape {d.shape} does not match output {expected}")
    grads = [None] * len(net.params)
    for i in range(len(net.spec.layers) - 1, -1, -1):
        d, g = L.backward(net.spec.layers[i], net.params[i], cache.inputs[i], cache.aux[i], d, need_dx=i > 0)
        grads[i] = g
    return grads


# --------------------------------------------------------------------------
# checkpoints


def save_network(path, net, meta=None):
    arrays = [(f"{net.spec.names[i]}.{k}", a) for i, k, a in net.flat_params()]
    m = dict(meta or {})
    m["spec"] = net.spec.to_dict()
    container.save(path, "network", arrays, m)


def load_network(path, dtype=np.float64):
    meta, arrays = container.load(path, "network")
    spec = NetworkSpec.from_dict(meta["spec"])
    spec.shapes()
    params = []
    in_shape = spec.input_shape
    for layer, name, out_shape in zip(spec.layers, spec.names, spec.shapes()):
        p = {}
        for key, shape in L.param_shapes(layer, in_shape).items():
            a = arrays[f"{name}.{key}"]
            if a.shape != tuple(shape):
                raise CompositionError(f"{name}.{key}: checkpoint shape {a.shape} != {shape}")
            p[key] = a
        params.append(p)
        in_shape = out_shape
    return Network(spec, params, dtype), meta
