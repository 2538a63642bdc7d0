"""PCA and ridge-regularised multivariate linear regression."""
from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError, SolverError


@dataclass
class PcaModel:
    mean: np.ndarray  # (d,)
    basis: np.ndarray  # (d, p), orthonormal columns

    @property
    def dim(self):
        return self.basis.shape[1]


def pca_fit(vectors, p):
    """Top-``p`` principal directions of the mean-centred rows.

    Column signs are fixed so that each column's largest-magnitude entry is
    positive.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ParameterError("PCA needs an (n, d) matrix with n >= 2")
    n, d = X.shape
    p = int(p)
    if not 1 <= p <= min(n - 1, d):
        raise ParameterError(f"PCA output dim {p} must lie in [1, min(n-1, d)] = [1, {min(n - 1, d)}]")
    mean = X.mean(axis=0)
    _, _, vt = np.linalg.svd(X - mean, full_matrices=False)
    basis = vt[:p].T.copy()
    flip = np.sign(basis[np.argmax(np.abs(basis), axis=0), np.arange(p)])
    basis *= np.where(flip == 0, 1.0, flip)
    return PcaModel(mean, basis)


def pca_project(model, vectors):
    return (np.asarray(vectors, dtype=np.float64) - model.mean) @ model.basis


@dataclass
class LinearModel:
    weights: np.ndarray  # (p + 1, C), last row is the bias

    def predict(self, features):
        return mvregress_predict(self, features)


def _design(features):
    F = np.asarray(features, dtype=np.float64)
    return np.hstack([F, np.ones((F.shape[0], 1))])


def mvregress_fit(features, targets, ridge=0.0):
    """Least squares ``targets ~ [features, 1] @ W`` with an L2 penalty on
    every row of W except the bias row, solved through the normal equations."""
    A = _design(features)
    Y = np.asarray(targets, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if len(Y) != len(A):
        raise ParameterError("features and targets differ in length")
    if ridge < 0:
        raise ParameterError("ridge penalty must be >= 0")
    G = A.T @ A
    pen = np.full(A.shape[1], float(ridge))
    pen[-1] = 0.0
    G[np.diag_indices_from(G)] += pen
    if ridge == 0 and np.linalg.matrix_rank(A) < A.shape[1]:
        raise SolverError("normal equations are singular; use a ridge penalty > 0")
    try:
        Lc = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise SolverError("normal equations are not positive definite; use a ridge penalty > 0") from None
    z = np.linalg.solve(Lc, A.T @ Y)
    return LinearModel(np.linalg.solve(Lc.T, z))


def mvregress_predict(model, features):
    return _design(features) @ model.weights
