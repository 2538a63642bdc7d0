"""Minibatch SGD with momentum and weight decay."""
import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import rng as rngmod
from ..errors import DataError, ParameterError, TrainingError
from .network import backward, forward, init_network


@dataclass
class OptConfig:
    lr: float = 0.003
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 8
    epochs: int = 25
    seed: int = 0
    lr_decay: float = 0.95  # multiplicative, applied after every epoch
    flip: bool = False
    dtype: str = "float32"

    def validate(self):
        if self.lr < 0 or not math.isfinite(self.lr):
            raise ParameterError("learning rate must be finite and >= 0")
        if not 0 <= self.momentum < 1:
            raise ParameterError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ParameterError("weight decay must be >= 0")
        if int(self.batch_size) < 1 or int(self.epochs) < 1:
            raise ParameterError("batch_size and epochs must be >= 1")
        if not 0 < self.lr_decay <= 1:
            raise ParameterError("lr_decay must lie in (0, 1]")
        np.dtype(self.dtype)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    net: object
    history: list


def sgd_step(net, grads, velocity, lr, momentum, weight_decay):
    for p, g, v in zip(net.params, grads, velocity):
        for key, grad in g.items():
            step = grad + weight_decay * p[key] if key == "W" and weight_decay else grad
            v[key] *= momentum
            v[key] -= lr * step
            p[key] += v[key]
    net.version += 1


def train(inputs, targets, net_spec, loss, opt, net=None, callback=None):
    """Fit a network; returns the trained net and the mean loss of each epoch.

    ``loss`` is any callable ``(scores, targets) -> (value, dvalue/dscores)``.
    """
    opt.validate()
    n = len(inputs)
    if n == 0:
        raise DataError("cannot train on an empty dataset")
    if len(targets) != n:
        raise DataError("inputs and targets differ in length")
    dtype = np.dtype(opt.dtype)
    if net is None:
        net = init_network(net_spec, opt.seed, dtype)
    else:
        net = net.astype(dtype)
    inputs = np.asarray(inputs, dtype=dtype)
    targets = np.asarray(targets)
    velocity = [{k: np.zeros_like(a) for k, a in p.items()} for p in net.params]
    bs = int(opt.batch_size)
    lr = float(opt.lr)
    history = []
    for epoch in range(int(opt.epochs)):
        order = rngmod.stream(opt.seed, "shuffle", epoch).permutation(n)
        flips = rngmod.stream(opt.seed, "flip", epoch).random(n) < 0.5 if opt.flip else None
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            xb = inputs[idx]
            if flips is not None and flips[idx].any():
                xb = xb.copy()
                sel = flips[idx]
                xb[sel] = xb[sel][..., ::-1]
            # overflow surfaces as a non-finite loss, reported just below
            with np.errstate(over="ignore", invalid="ignore"):
                scores, cache = forward(net, xb)
                value, grad = loss(scores, targets[idx])
            if not math.isfinite(value):
                raise TrainingError(f"training diverged: non-finite loss in epoch {epoch + 1}", epoch + 1)
            total += value * len(idx)
            sgd_step(net, backward(net, cache, grad), velocity, lr, opt.momentum, opt.weight_decay)
        history.append(total / n)
        if callback is not None:
            callback(epoch, history[-1])
        lr *= opt.lr_decay
    return TrainResult(net, history)
