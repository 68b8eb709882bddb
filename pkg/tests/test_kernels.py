import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from woodycover.regression.kernels import (NumericalError, fit_kernel_ridge, kernel_matrix,
                                           kernel_ridge_residual, predict_kernel_ridge, rbf_kernel)

from oracles import ridge_closed_form


def test_rbf_examples():
    assert rbf_kernel([0.3, -2.0], [0.3, -2.0], 7.0) == 1.0
    assert rbf_kernel([0, 0], [5, 9], 0.0) == 1.0
    assert rbf_kernel([0, 0], [1, 1], 0.5) == pytest.approx(math.exp(-1), abs=1e-12)
    with pytest.raises(ValueError):
        rbf_kernel([0, 0], [1, 1, 1], 0.5)


def test_kernel_matrix_matches_pairwise(rng):
    A, B = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    K = kernel_matrix(A, B, 0.7)
    for i in range(5):
        for j in range(4):
            assert K[i, j] == pytest.approx(rbf_kernel(A[i], B[j], 0.7), abs=1e-12)


def test_single_point():
    st_ = fit_kernel_ridge([[0.4, 1.0]], [0.8], alpha=0.25, gamma=1.0)
    assert st_.dual_coef[0] == pytest.approx(0.8 / 1.25)
    assert predict_kernel_ridge(st_, [[0.4, 1.0]])[0] == pytest.approx(0.8 / 1.25)


def test_interpolation_limit(rng):
    X = rng.normal(size=(15, 3))
    y = rng.random(15)
    st_ = fit_kernel_ridge(X, y, alpha=1e-12, gamma=0.5)
    assert np.allclose(predict_kernel_ridge(st_, X), y, atol=1e-6)


@given(st.integers(0, 2 ** 32 - 1))
def test_linear_kernel_equals_ridge(seed):
    rng = np.random.default_rng(seed)
    n, p = int(rng.integers(3, 30)), int(rng.integers(1, 8))
    X, y = rng.normal(size=(n, p)), rng.normal(size=n)
    alpha = float(10 ** rng.uniform(-2, 1))
    Xn = rng.normal(size=(7, p))
    st_ = fit_kernel_ridge(X, y, alpha, gamma=0.0, kernel="linear")
    assert np.allclose(predict_kernel_ridge(st_, Xn), ridge_closed_form(X, y, alpha, Xn), atol=1e-8)


@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-6, 10), st.floats(1e-3, 5))
def test_residual_invariant(seed, alpha, gamma):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 40))
    X = rng.normal(size=(n, 4))
    X[n // 2:] = X[0]  # duplicated rows make K singular
    y = rng.random(n)
    st_ = fit_kernel_ridge(X, y, alpha, gamma)
    assert kernel_ridge_residual(st_, y, alpha) <= 1e-8 * (np.linalg.norm(y) + 1)


def test_input_errors():
    with pytest.raises(ValueError):
        fit_kernel_ridge([[0.0]], [1.0], alpha=0, gamma=1)
    with pytest.raises(ValueError):
        fit_kernel_ridge([[np.nan]], [1.0], alpha=1, gamma=1)
    with pytest.raises(ValueError):
        fit_kernel_ridge(np.zeros((0, 2)), [], alpha=1, gamma=1)


def test_jitter_escalation(monkeypatch):
    from scipy import linalg
    from woodycover.regression import kernels

    calls = []
    real = linalg.cho_factor

    def flaky(A, **kw):
        calls.append(A[0, 0])
        if len(calls) < 3:
            raise linalg.LinAlgError("not positive definite")
        return real(A, **kw)

    monkeypatch.setattr(kernels.linalg, "cho_factor", flaky)
    st_ = fit_kernel_ridge([[0.0], [1.0]], [0.0, 1.0], alpha=0.1, gamma=1.0)
    assert st_.jitter == kernels.JITTER_STEPS[2]

    def broken(A, **kw):
        raise linalg.LinAlgError("nope")

    monkeypatch.setattr(kernels.linalg, "cho_factor", broken)
    with pytest.raises(NumericalError):
        fit_kernel_ridge([[0.0], [1.0]], [0.0, 1.0], alpha=0.1, gamma=1.0)
