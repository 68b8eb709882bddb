"""Epsilon-insensitive support vector regression trained by SMO.

The dual is solved in the doubled form over ``a = [alpha, alpha*]`` with
labels ``z = [+1] * n + [-1] * n``::

    min  1/2 a' Q a + p' a,   Q_ij = z_i z_j K_ij,   p = [eps - y, eps + y]
    s.t. z' a = 0,  0 <= a <= C

Each step updates the maximal violating pair. The regression coefficients
are ``beta = alpha - alpha*``, so ``sum(beta) = 0`` and ``|beta_i| <= C``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .kernels import kernel_matrix

log = logging.getLogger(__name__)

TAU = 1e-12


@dataclass
class SVRState:
    support: np.ndarray
    beta: np.ndarray
    bias: float
    gamma: float
    converged: bool
    n_iter: int
    max_violation: float
    kernel: str = "rbf"


def _bias(a, G, z, C):
    yG = z * G
    upper = a >= C
    lower = a <= 0
    free = ~upper & ~lower
    if free.any():
        return -float(yG[free].mean())
    ub_sel = (upper & (z < 0)) | (lower & (z > 0))
    lb_sel = (upper & (z > 0)) | (lower & (z < 0))
    ub = yG[ub_sel].min() if ub_sel.any() else np.inf
    lb = yG[lb_sel].max() if lb_sel.any() else -np.inf
    if not np.isfinite(ub):
        ub = lb
    if not np.isfinite(lb):
        lb = ub
    return -float((ub + lb) / 2)


def smo_solve(K: np.ndarray, y: np.ndarray, C: float, epsilon: float, tol: float = 1e-3,
              max_iter: int = 100_000):
    """Run SMO on a precomputed kernel. Returns ``(beta, bias, converged, n_iter, violation)``."""
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    z = np.concatenate([np.ones(n), -np.ones(n)])
    a = np.zeros(2 * n)
    G = np.concatenate([epsilon - y, epsilon + y])
    diag = np.diag(K)
    converged = False
    violation = np.inf
    it = 0
    while True:
        vals = -z * G
        up = ((z > 0) & (a < C)) | ((z < 0) & (a > 0))
        low = ((z > 0) & (a > 0)) | ((z < 0) & (a < C))
        i = int(np.argmax(np.where(up, vals, -np.inf)))
        j = int(np.argmin(np.where(low, vals, np.inf)))
        violation = vals[i] - vals[j] if up.any() and low.any() else 0.0
        if violation < tol:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1
        ki, kj = i % n, j % n
        Kii, Kjj, Kij = diag[ki], diag[kj], K[ki, kj]
        ai_old, aj_old = a[i], a[j]
        quad = max(Kii + Kjj - 2.0 * Kij, TAU)
        if z[i] != z[j]:
            delta = (-G[i] - G[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total
        a[i], a[j] = ai, aj
        d_i, d_j = ai - ai_old, aj - aj_old
        # Q[:, t] = z * z_t * [K[:, t mod n]; K[:, t mod n]]
        col = z[i] * d_i * K[:, ki] + z[j] * d_j * K[:, kj]
        G[:n] += col
        G[n:] -= col
    beta = a[:n] - a[n:]
    return beta, _bias(a, G, z, C), converged, it, float(violation)


def dual_objective(K: np.ndarray, y: np.ndarray, beta: np.ndarray, epsilon: float) -> float:
    """-1/2 beta' K beta - eps * sum|beta| + y' beta (to be maximized)."""
    return float(-0.5 * beta @ K @ beta - epsilon * np.abs(beta).sum() + y @ beta)


def fit_svr(X, y, C: float = 10.0, epsilon: float = 0.01, gamma: float = 1.0, tol: float = 1e-3,
            max_iter: int = 100_000, kernel: str = "rbf") -> SVRState:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if C <= 0:
        raise ValueError("C must be positive")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite training data")
    K = kernel_matrix(X, X, gamma, kernel)
    beta, bias, converged, n_iter, violation = smo_solve(K, y, C, epsilon, tol, max_iter)
    if not converged:
        log.warning("SMO stopped after %d pair updates with KKT violation %.3g", n_iter, violation)
    keep = np.flatnonzero(beta != 0)
    return SVRState(X[keep].copy(), beta[keep], bias, float(gamma), converged, n_iter, violation, kernel)


def predict_svr(state: SVRState, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if len(state.beta) == 0:
        return np.full(len(X), state.bias)
    return kernel_matrix(X, state.support, state.gamma, state.kernel) @ state.beta + state.bias
