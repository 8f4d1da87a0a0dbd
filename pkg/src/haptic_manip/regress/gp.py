"""Local Gaussian-process regression over the k nearest (normalized) neighbours."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .spec import GPSpec

_CHUNK = 256


def rbf(a: np.ndarray, b: np.ndarray, lengthscale: float, signal: float) -> np.ndarray:
    """k(a, b) = s^2 exp(-|a-b|^2 / 2l^2), broadcasting over leading axes."""
    d2 = np.sum((a[..., :, None, :] - b[..., None, :, :]) ** 2, axis=-1)
    return signal**2 * np.exp(-0.5 * d2 / lengthscale**2)


def _jitter(gp: GPSpec) -> float:
    # keeps noiseless kernels with duplicate points solvable
    return max(gp.noise**2, 1e-12 * gp.signal**2)


class LocalGP:
    """Retained training set plus kd-tree; immutable once built."""

    def __init__(self, X: np.ndarray, Y: np.ndarray, gp: GPSpec):
        if len(X) == 0:
            raise ValueError("local GP needs a nonempty training set")
        self.X = np.ascontiguousarray(X, dtype=float)
        self.Y = np.ascontiguousarray(Y, dtype=float)
        self.gp = gp
        self.tree = cKDTree(self.X)

    @property
    def k(self) -> int:
        return min(self.gp.neighbors, len(self.X))

    def neighbors(self, q: np.ndarray) -> np.ndarray:
        q = np.atleast_2d(q)
        if self.k == len(self.X):
            # tiny set: every point is a neighbour, no index needed
            return np.broadcast_to(np.arange(len(self.X)), (len(q), len(self.X)))
        _, idx = self.tree.query(q, k=self.k)
        return np.asarray(idx).reshape(len(q), self.k)

    def posterior(self, q: np.ndarray):
        """Posterior mean (m, d_out) and latent variance (m,) at queries ``q``."""
        q = np.atleast_2d(np.asarray(q, dtype=float))
        gp = self.gp
        mean = np.empty((len(q), self.Y.shape[1]))
        var = np.empty(len(q))
        eye = np.eye(self.k)
        for s in range(0, len(q), _CHUNK):
            qc = q[s:s + _CHUNK]
            idx = self.neighbors(qc)
            Xn = self.X[idx]
            K = rbf(Xn, Xn, gp.lengthscale, gp.signal) + _jitter(gp) * eye
            ks = rbf(qc[:, None, :], Xn, gp.lengthscale, gp.signal)[:, 0, :]
            rhs = np.concatenate([self.Y[idx], ks[:, :, None]], axis=2)
            sol = np.linalg.solve(K, rhs)
            mean[s:s + _CHUNK] = np.einsum("mk,mkd->md", ks, sol[:, :, :-1])
            var[s:s + _CHUNK] = gp.signal**2 - np.einsum("mk,mk->m", ks, sol[:, :, -1])
        return mean, np.maximum(var, 0.0)


def log_marginal_likelihood(X, Y, gp: GPSpec) -> float:
    """Dense GP log evidence summed over output dimensions."""
    n = len(X)
    K = rbf(X, X, gp.lengthscale, gp.signal) + _jitter(gp) * np.eye(n)
    L = np.linalg.cholesky(K)
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, Y))
    d = Y.shape[1]
    return float(-0.5 * np.sum(Y * alpha) - d * np.sum(np.log(np.diag(L))) - 0.5 * n * d * np.log(2 * np.pi))


LENGTHSCALE_GRID = (0.25, 0.5, 1.0, 2.0, 4.0)
NOISE_GRID = (0.01, 0.05, 0.1, 0.2)


def grid_search(X, Y, gp: GPSpec, rng: np.random.Generator, subsample: int = 500) -> GPSpec:
    """Pick (lengthscale, noise) maximizing the log evidence on a random subsample."""
    import dataclasses

    if len(X) > subsample:
        sel = rng.choice(len(X), subsample, replace=False)
        X, Y = X[sel], Y[sel]
    best, best_ll = gp, -np.inf
    for ls in LENGTHSCALE_GRID:
        for sn in NOISE_GRID:
            cand = dataclasses.replace(gp, lengthscale=ls, noise=sn)
            try:
                ll = log_marginal_likelihood(X, Y, cand)
            except np.linalg.LinAlgError:
                continue
            if ll > best_ll:
                best, best_ll = cand, ll
    return best
