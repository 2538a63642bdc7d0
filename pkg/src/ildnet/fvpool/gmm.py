"""Diagonal-covariance Gaussian mixture fitted by EM."""
from dataclasses import dataclass, field

import numpy as np

from .. import rng as rngmod
from ..errors import DataError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GmmModel:
    means: np.ndarray  # (M, D)
    variances: np.ndarray  # (M, D)
    weights: np.ndarray  # (M,)
    log_likelihoods: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def log_joint(self, X):
        """log(pi_m) + log N(x_i | mu_m, diag(var_m)), shape (N, M)."""
        X = np.asarray(X, dtype=np.float64)
        prec = 1.0 / self.variances
        quad = (X * X) @ prec.T - 2.0 * X @ (self.means * prec).T + np.sum(self.means ** 2 * prec, axis=1)
        logdet = np.sum(np.log(self.variances), axis=1)
        return np.log(self.weights) - 0.5 * (self.dim * LOG_2PI + logdet + quad)

    def responsibilities(self, X):
        lj = self.log_joint(X)
        return _normalize_log(lj)[0]

    def score(self, X):
        """Mean per-sample log-likelihood."""
        return float(np.mean(_normalize_log(self.log_joint(X))[1]))


def _normalize_log(lj):
    mx = lj.max(axis=1, keepdims=True)
    e = np.exp(lj - mx)
    s = e.sum(axis=1, keepdims=True)
    return e / s, (mx + np.log(s))[:, 0]


def _kmeans_pp(X, k, rng):
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _assign(X, centers):
    d = np.sum(X * X, axis=1)[:, None] - 2.0 * X @ centers.T + np.sum(centers * centers, axis=1)
    return np.argmin(d, axis=1)


def gmm_fit(X, M, seed=0, max_iters=100, rel_tol=1e-6, max_samples=200_000,
            init_samples=20_000, kmeans_iters=10, var_floor_rel=1e-4):
    """Fit an M-component diagonal GMM.

    Descriptors beyond ``max_samples`` are uniformly subsampled. Seeding is
    k-means++ on at most ``init_samples`` points followed by ``kmeans_iters``
    Lloyd steps, then EM until the log-likelihood gain drops below
    ``rel_tol`` (relative) or ``max_iters`` is reached.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("descriptors must be a 2-D (N, D) array")
    n, d = X.shape
    M = int(M)
    if M < 1:
        raise DataError("need at least one mixture component")
    if n < M:
        raise DataError(f"need at least M={M} descriptors, got {n}")
    rng = rngmod.stream(seed, "gmm")
    if n > max_samples:
        X = X[np.sort(rng.choice(n, max_samples, replace=False))]
        n = max_samples

    # EM runs on centred data to limit cancellation in E[x^2] - mu^2
    center = X.mean(axis=0)
    X = X - center
    global_var = X.var(axis=0)
    floor = np.maximum(var_floor_rel * global_var, 1e-10)
    warnings = []

    init = X if n <= init_samples else X[np.sort(rng.choice(n, init_samples, replace=False))]
    centers = _kmeans_pp(init, M, rng)
    for _ in range(kmeans_iters):
        lab = _assign(init, centers)
        for m in range(M):
            members = init[lab == m]
            if len(members):
                centers[m] = members.mean(axis=0)
    lab = _assign(init, centers)
    variances = np.empty((M, d))
    weights = np.empty(M)
    for m in range(M):
        members = init[lab == m]
        weights[m] = max(len(members), 1)
        variances[m] = members.var(axis=0) if len(members) > 1 else global_var
    variances = np.maximum(variances, floor)
    gmm = GmmModel(centers.copy(), variances, weights / weights.sum(), [], warnings)

    lls = []
    for it in range(int(max_iters)):
        gamma, ll_i = _normalize_log(gmm.log_joint(X))
        ll = float(np.mean(ll_i))
        lls.append(ll)
        if len(lls) > 1 and ll - lls[-2] < rel_tol * abs(lls[-2]):
            break
        nk = gamma.sum(axis=0)
        dead = nk < 1e-8 * n
        if np.any(dead):
            warnings.append(f"iteration {it}: components {np.flatnonzero(dead).tolist()} collapsed")
        safe = np.where(dead, 1.0, nk)
        means = (gamma.T @ X) / safe[:, None]
        var = (gamma.T @ (X * X)) / safe[:, None] - means ** 2
        means[dead] = gmm.means[dead]
        var[dead] = gmm.variances[dead]
        clipped = var < floor
        if np.any(clipped & ~dead[:, None]):
            warnings.append(f"iteration {it}: variance floor applied to {int(clipped.sum())} entries")
        var = np.maximum(var, floor)
        w = np.maximum(nk, 1e-10 * n)
        gmm = GmmModel(means, var, w / w.sum(), lls, warnings)
    else:
        lls.append(gmm.score(X))
    return GmmModel(gmm.means + center, gmm.variances, gmm.weights, lls, warnings)
