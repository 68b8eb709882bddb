"""RBF kernel and kernel ridge regression solved by Cholesky factorization."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

log = logging.getLogger(__name__)

JITTER_STEPS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class NumericalError(ArithmeticError):
    pass


def rbf_kernel(a, b, gamma: float) -> float:
    """exp(-gamma * ||a - b||^2) for two vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"vector lengths differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.exp(-gamma * np.dot(d, d)))


def squared_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    aa = np.einsum("ij,ij->i", A, A)
    bb = np.einsum("ij,ij->i", B, B)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (A @ B.T)
    return np.maximum(d2, 0.0)


def kernel_matrix(A, B, gamma: float, kind: str = "rbf") -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"feature counts differ: {A.shape[1]} vs {B.shape[1]}")
    if kind == "rbf":
        if A.shape[1] == 0:
            return np.ones((len(A), len(B)))
        return np.exp(-gamma * squared_distances(A, B))
    if kind == "linear":
        return A @ B.T
    raise ValueError(f"unknown kernel {kind!r}")


@dataclass
class KernelRidgeState:
    support: np.ndarray
    dual_coef: np.ndarray
    gamma: float
    kernel: str = "rbf"
    jitter: float = 0.0


def fit_kernel_ridge(X, y, alpha: float, gamma: float, kernel: str = "rbf",
                     refine_steps: int = 2) -> KernelRidgeState:
    """Solve (K + alpha I) c = y.

    The Cholesky factorization is retried with growing diagonal jitter if it
    fails; the jitter used is kept on the state. A couple of iterative
    refinement steps against the un-jittered system follow.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) < 1:
        raise ValueError("kernel ridge needs at least one training row")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite training data")
    K = kernel_matrix(X, X, gamma, kernel)
    A = K + alpha * np.eye(len(X))
    factor = None
    for jitter in JITTER_STEPS:
        try:
            factor = linalg.cho_factor(A + jitter * np.eye(len(X)), lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if np.all(np.isfinite(factor[0])) and np.all(np.diag(factor[0]) > 0):
            break
        factor = None
    if factor is None:
        raise NumericalError(f"Cholesky factorization failed even with jitter {JITTER_STEPS[-1]}")
    if jitter:
        log.warning("kernel ridge needed diagonal jitter %g", jitter)
    c = linalg.cho_solve(factor, y, check_finite=False)
    for _ in range(refine_steps):
        c = c + linalg.cho_solve(factor, y - A @ c, check_finite=False)
    return KernelRidgeState(X.copy(), c, float(gamma), kernel, float(jitter))


def kernel_ridge_residual(state: KernelRidgeState, y, alpha: float) -> float:
    """||(K + alpha I) c - y|| for the fitted coefficients."""
    K = kernel_matrix(state.support, state.support, state.gamma, state.kernel)
    return float(np.linalg.norm(K @ state.dual_coef + alpha * state.dual_coef - np.asarray(y)))


def predict_kernel_ridge(state: KernelRidgeState, X) -> np.ndarray:
    return kernel_matrix(X, state.support, state.gamma, state.kernel) @ state.dual_coef
