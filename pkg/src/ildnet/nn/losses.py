"""Loss heads. Every head returns ``(loss, dloss/df)`` averaged over the batch."""
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ..errors import LabelError, ParameterError, StatsError

HEADS = ("multilabel_logistic", "regression_l2", "regression_smooth_l1")


def _weights(beta, c, dtype):
    if beta is None:
        return np.ones(c, dtype=dtype)
    beta = np.asarray(beta, dtype=dtype)
    if beta.shape != (c,):
        raise ParameterError(f"class weights must have length {c}")
    return beta


def softplus_neg(z):
    """log(1 + exp(-z)) without overflow."""
    return np.maximum(0.0, -z) + np.log1p(np.exp(-np.abs(z)))


def sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def loss_multilabel_logistic(f, y, beta=None):
    """Sum over classes of weighted binary logistic losses; ``y`` in {-1, +1}."""
    f = np.asarray(f)
    y = np.asarray(y, dtype=f.dtype)
    if y.shape != f.shape:
        raise LabelError(f"label shape {y.shape} does not match scores {f.shape}")
    if not np.all((y == 1) | (y == -1)):
        raise LabelError("multi-label logistic targets must be -1 or +1")
    beta = _weights(beta, f.shape[1], f.dtype)
    n = f.shape[0]
    z = y * f
    loss = float(np.sum(softplus_neg(z) * beta)) / n
    grad = (-y * sigmoid(-z)) * beta / n
    return loss, grad


def smooth_l1(x):
    a = np.abs(x)
    return np.where(a < 1, 0.5 * x * x, a - 0.5)


def smooth_l1_grad(x):
    return np.where(np.abs(x) < 1, x, np.sign(x))


def loss_regression(f, y, kind="smooth_l1", beta=None):
    """Weighted per-class regression loss on residuals ``y - f``."""
    f = np.asarray(f)
    y = np.asarray(y, dtype=f.dtype)
    if y.shape != f.shape:
        raise LabelError(f"target shape {y.shape} does not match scores {f.shape}")
    if not np.all(np.isfinite(y)):
        raise LabelError("regression targets must be finite")
    beta = _weights(beta, f.shape[1], f.dtype)
    n = f.shape[0]
    x = y - f
    if kind == "l2":
        per, dx = x * x, 2.0 * x
    elif kind == "smooth_l1":
        per, dx = smooth_l1(x), smooth_l1_grad(x)
    else:
        raise ParameterError(f"unknown regression kind {kind!r}")
    return float(np.sum(per * beta)) / n, -dx * beta / n


def loss_softmax_xent(f, labels):
    """Single-label softmax cross-entropy; ``labels`` are integer class ids."""
    f = np.asarray(f)
    labels = np.asarray(labels, dtype=np.intp)
    n, c = f.shape
    if labels.shape != (n,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise LabelError("softmax labels must be integer ids in [0, C)")
    s = f - f.max(axis=1, keepdims=True)
    logp = s - np.log(np.exp(s).sum(axis=1, keepdims=True))
    p = np.exp(logp)
    loss = -float(logp[np.arange(n), labels].sum()) / n
    grad = p
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def softmax(f):
    s = f - f.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class ClassStats:
    positives: np.ndarray

    @property
    def total(self):
        return int(np.sum(self.positives))

    @classmethod
    def from_labels(cls, labels):
        """Positive counts per class from a binary (N, C) label matrix."""
        return cls(np.asarray(labels).astype(bool).sum(axis=0).astype(np.int64))


def class_balance_weights(stats, C=None, exact=False):
    """``beta_k = (1 - |Y_k| / |Y|) / C``.

    With ``exact=True`` the weights are returned as Fractions, which sum to
    (C - 1) / C with no rounding.
    """
    pos = [int(v) for v in np.asarray(stats.positives).ravel()]
    C = len(pos) if C is None else int(C)
    if len(pos) != C:
        raise StatsError(f"expected {C} class counts, got {len(pos)}")
    if any(v < 0 for v in pos):
        raise StatsError("class counts must be non-negative")
    total = sum(pos)
    if total <= 0:
        raise StatsError("cannot balance classes: no positive labels at all")
    frac = [(1 - Fraction(p, total)) / C for p in pos]
    if exact:
        return frac
    return np.array([float(v) for v in frac])


@dataclass
class LossSpec:
    head: str = "multilabel_logistic"
    class_weights: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.head not in HEADS:
            raise ParameterError(f"unknown loss head {self.head!r}")
        if self.class_weights is not None:
            w = np.asarray(self.class_weights, dtype=np.float64)
            if np.any(w <= 0):
                raise ParameterError("class weights must be positive")
            self.class_weights = w

    def __call__(self, f, y):
        if self.head == "multilabel_logistic":
            return loss_multilabel_logistic(f, y, self.class_weights)
        kind = "l2" if self.head == "regression_l2" else "smooth_l1"
        return loss_regression(f, y, kind, self.class_weights)

    def to_dict(self):
        return {"head": self.head,
                "class_weights": None if self.class_weights is None else [float(v) for v in self.class_weights]}
