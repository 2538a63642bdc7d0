"""Descriptor extraction and Fisher-vector encoding."""
from dataclasses import dataclass

import numpy as np

from ..errors import CompositionError


@dataclass
class DescriptorSet:
    vectors: np.ndarray  # (W*H, D); row order carries no meaning
    layer_tag: str

    @property
    def dim(self):
        return self.vectors.shape[1]


def extract_descriptors(activations, layer_tag):
    """One DescriptorSet per image from a forward cache (or name->array dict).

    A (N, D, H, W) map yields H*W descriptors of dimension D per image; a
    fully-connected output (N, D) yields a single descriptor per image.
    """
    outputs = getattr(activations, "outputs", activations)
    try:
        a = outputs[layer_tag]
    except KeyError:
        raise KeyError(f"unknown layer {layer_tag!r}; available: {sorted(outputs)}") from None
    a = np.asarray(a)
    if a.ndim == 4:
        n, d = a.shape[:2]
        flat = a.reshape(n, d, -1).transpose(0, 2, 1)
    elif a.ndim == 2:
        flat = a[:, None, :]
    else:
        raise CompositionError(f"{layer_tag}: cannot extract descriptors from shape {a.shape}")
    return [DescriptorSet(np.ascontiguousarray(v, dtype=np.float64), layer_tag) for v in flat]


def _canonical(X):
    # fixed row order makes every reduction below independent of input order
    order = np.lexsort(X.T[::-1])
    return X[order]


def fv_encode(descriptors, gmm, improved=True):
    """2*M*D Fisher vector ``[u_1, v_1, ..., u_M, v_M]`` of one descriptor set.

    ``u_m`` and ``v_m`` are the posterior-weighted first- and second-order
    deviations from component m, scaled by 1/(N sqrt(pi_m)) and
    1/(N sqrt(2 pi_m)). ``improved`` applies signed square root followed by
    L2 normalisation.
    """
    X = getattr(descriptors, "vectors", descriptors)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != gmm.dim:
        raise CompositionError(f"descriptor dimension {X.shape[-1]} does not match GMM dimension {gmm.dim}")
    X = _canonical(X)
    n = X.shape[0]
    gamma = gmm.responsibilities(X)
    s0 = gamma.sum(axis=0)
    s1 = gamma.T @ X
    s2 = gamma.T @ (X * X)
    mu, var, pi = gmm.means, gmm.variances, gmm.weights
    sigma = np.sqrt(var)
    u = (s1 - s0[:, None] * mu) / sigma / (n * np.sqrt(pi))[:, None]
    v = ((s2 - 2.0 * mu * s1 + s0[:, None] * mu * mu) / var - s0[:, None]) / (n * np.sqrt(2.0 * pi))[:, None]
    fv = np.stack([u, v], axis=1).reshape(-1)
    if improved:
        fv = np.sign(fv) * np.sqrt(np.abs(fv))
        norm = np.linalg.norm(fv)
        if norm > 0:
            fv = fv / norm
    return fv
