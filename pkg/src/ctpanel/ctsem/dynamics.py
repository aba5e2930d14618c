"""Exact discretization of linear SDEs ``dx = (A x + b) dt + G dW``."""
from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from ..errors import NumericalError


def is_stable(A) -> bool:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return bool(np.all(np.linalg.eigvals(A).real < 0))


def stationary_covariance(A, Q) -> np.ndarray:
    """Solve ``A X + X A^T + Q = 0`` through the Kronecker-sum linear system."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(Q))):
        raise NumericalError("non-finite drift or diffusion")
    if not is_stable(A):
        raise NumericalError("drift matrix is not stable; no stationary covariance")
    n = A.shape[0]
    eye = np.eye(n)
    # row-major vec: vec(A X) = (A kron I) vec(X), vec(X A^T) = (I kron A) vec(X)
    K = np.kron(A, eye) + np.kron(eye, A)
    X = np.linalg.solve(K, -Q.reshape(-1)).reshape(n, n)
    return 0.5 * (X + X.T)


def discretize_dynamics(A, b, Q, dt: float):
    """Return ``(A_d, b_d, Q_d)`` for an interval of length ``dt``.

    ``A_d = exp(A dt)``; ``b_d`` comes from the augmented exponential
    ``exp([[A, b], [0, 0]] dt)`` so no inverse of A is formed;
    ``Q_d = Q_inf - A_d Q_inf A_d^T`` with the stationary covariance.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = A.shape[0]
    if dt < 0:
        raise ValueError("dt must be non-negative")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.all(np.isfinite(Q)) and np.isfinite(dt)):
        raise NumericalError("non-finite input to discretize_dynamics")
    if dt == 0:
        return np.eye(n), np.zeros(n), np.zeros((n, n))
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = A
    aug[:n, n] = b
    E = expm(aug * dt)
    A_d = E[:n, :n]
    b_d = E[:n, n]
    Q_inf = stationary_covariance(A, Q)
    Q_d = Q_inf - A_d @ Q_inf @ A_d.T
    return A_d, b_d, 0.5 * (Q_d + Q_d.T)
