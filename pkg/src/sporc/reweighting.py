"""Truncation to covered samples and kernel-mean-matching importance weights."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from sporc.errors import AllTruncated, DimMismatch, SolverFailure

WEIGHT_TOL = 1e-6


def truncate(dataset, cal):
    """Keep the samples whose constraint rows all lie in their uncertainty sets.

    Returns
    -------
    kept : ndarray of int
        Sorted indices into ``dataset``.
    truncated : Dataset
    """
    if dataset.n == 0:
        raise AllTruncated("nothing to truncate: dataset is empty")
    kept = np.flatnonzero(cal.covered(dataset))
    if kept.size == 0:
        raise AllTruncated("no training sample lies inside its uncertainty set")
    return kept, dataset.subset(kept)


def gaussian_kernel_matrix(X, Y, bandwidth=1.0):
    """``K[i, j] = exp(-||X_i - Y_j||^2 / bandwidth)``."""
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    if X.shape[1] != Y.shape[1]:
        raise DimMismatch(f"feature dims differ: {X.shape[1]} vs {Y.shape[1]}")
    sq = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * X @ Y.T
    return np.exp(-np.maximum(sq, 0.0) / bandwidth)


@dataclass(frozen=True)
class ImportanceWeights:
    beta: np.ndarray
    B_cap: float
    epsilon: float

    @property
    def n(self):
        return self.beta.size

    def normalized(self):
        """Weights rescaled to mean one."""
        return self.beta / self.beta.mean()


def default_epsilon(m):
    return (math.sqrt(m) - 1.0) / math.sqrt(m)


def kmm_weights(source_X, target_X, B_cap=1000.0, epsilon=None, bandwidth=1.0):
    """Kernel mean matching of the source sample onto the target sample.

    Solves the quadratic program

        min 0.5 b^T K b - kappa^T b
        s.t. 0 <= b <= B_cap,  |sum(b) - m| <= m * epsilon

    with ``K`` the Gaussian kernel on the ``m`` source points and
    ``kappa_i = (m / n) sum_j k(x_i, x'_j)`` over the ``n`` target points.
    """
    from cvxopt import matrix, solvers, sparse, spmatrix

    S = np.atleast_2d(np.asarray(source_X, float))
    T = np.atleast_2d(np.asarray(target_X, float))
    m, n = S.shape[0], T.shape[0]
    if m == 0 or n == 0:
        raise ValueError("source and target samples must be non-empty")
    if B_cap <= 0:
        raise ValueError("B_cap must be positive")
    eps = default_epsilon(m) if epsilon is None else float(epsilon)
    if eps < 0:
        raise ValueError("epsilon must be nonnegative")

    K = gaussian_kernel_matrix(S, S, bandwidth)
    K = 0.5 * (K + K.T) + 1e-8 * np.eye(m)
    kappa = (m / n) * gaussian_kernel_matrix(S, T, bandwidth).sum(axis=1)

    ones = matrix(1.0, (1, m))
    eye = spmatrix(1.0, range(m), range(m))
    G = sparse([ones, -ones, -eye, eye])
    h = np.concatenate([[m * (1 + eps)], [m * (eps - 1)], np.zeros(m), np.full(m, float(B_cap))])
    opts = {"show_progress": False, "abstol": 1e-9, "reltol": 1e-9, "feastol": 1e-9, "maxiters": 200}
    sol = solvers.qp(matrix(K), matrix(-kappa), G, matrix(h), options=opts)
    if sol["status"] != "optimal" and sol["x"] is None:
        raise SolverFailure(f"KMM quadratic program failed: {sol['status']}")
    beta = np.asarray(sol["x"], float).ravel()
    if not np.all(np.isfinite(beta)):
        raise SolverFailure("KMM returned non-finite weights")

    # interior-point iterates can sit a hair outside the box
    beta = np.clip(beta, 0.0, float(B_cap))
    total = beta.sum()
    if abs(total - m) > m * eps + WEIGHT_TOL:
        raise SolverFailure(f"KMM weights violate the sum constraint: sum = {total:.6g}")
    return ImportanceWeights(beta, float(B_cap), eps)
