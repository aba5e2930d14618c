import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad_vec
from scipy.linalg import expm

from ctpanel.ctsem.dynamics import discretize_dynamics, is_stable, stationary_covariance
from ctpanel.errors import NumericalError

from oracles import random_stable, van_loan


def test_zero_interval_is_identity():
    A_d, b_d, Q_d = discretize_dynamics([[-0.5]], [1.0], [[1.0]], 0.0)
    assert A_d.tolist() == [[1.0]] and b_d.tolist() == [0.0] and Q_d.tolist() == [[0.0]]


def test_scalar_transition():
    A_d, _, _ = discretize_dynamics([[-0.5]], [0.0], [[1.0]], 2.0)
    assert A_d[0, 0] == pytest.approx(math.exp(-1), abs=1e-12)
    assert A_d[0, 0] == pytest.approx(0.367879, abs=1e-6)


def test_scalar_noise():
    _, _, Q_d = discretize_dynamics([[-0.5]], [0.0], [[1.0]], 2.0)
    assert Q_d[0, 0] == pytest.approx(1 - math.exp(-2), abs=1e-12)
    assert Q_d[0, 0] == pytest.approx(0.864665, abs=1e-6)


def test_scalar_stationary():
    assert stationary_covariance([[-0.5]], [[1.0]])[0, 0] == pytest.approx(1.0, abs=1e-14)


def test_identity_stationary():
    X = stationary_covariance(-np.eye(2), np.eye(2))
    assert np.allclose(X, 0.5 * np.eye(2), atol=1e-14)


def test_unstable_drift_signalled():
    with pytest.raises(NumericalError):
        stationary_covariance([[0.1]], [[1.0]])
    with pytest.raises(NumericalError):
        discretize_dynamics([[0.1]], [0.0], [[1.0]], 1.0)
    assert not is_stable([[0.0, 1.0], [-1.0, 0.0]])


def test_non_finite_inputs():
    with pytest.raises(NumericalError):
        discretize_dynamics([[np.nan]], [0.0], [[1.0]], 1.0)
    with pytest.raises(ValueError):
        discretize_dynamics([[-1.0]], [0.0], [[1.0]], -1.0)


def test_integral_oracle_small_system():
    rng = np.random.default_rng(5)
    A = random_stable(rng, 3)
    G = np.tril(rng.normal(size=(3, 3)))
    Q = G @ G.T
    b = rng.normal(size=3)
    dt = 1.7
    A_d, b_d, Q_d = discretize_dynamics(A, b, Q, dt)
    Q_ref, _ = quad_vec(lambda s: expm(A * s) @ Q @ expm(A * s).T, 0, dt, epsabs=1e-13, epsrel=1e-12)
    b_ref, _ = quad_vec(lambda s: expm(A * s) @ b, 0, dt, epsabs=1e-13, epsrel=1e-12)
    assert np.allclose(A_d, expm(A * dt), atol=1e-12)
    assert np.allclose(Q_d, Q_ref, atol=1e-10)
    assert np.allclose(b_d, b_ref, atol=1e-10)


@given(st.integers(1, 5), st.integers(0, 2**32 - 1), st.floats(0.01, 20.0))
def test_noise_matches_van_loan(n, seed, dt):
    rng = np.random.default_rng(seed)
    A = random_stable(rng, n)
    G = np.tril(rng.normal(size=(n, n)))
    Q = G @ G.T
    _, _, Q_d = discretize_dynamics(A, np.zeros(n), Q, dt)
    _, Q_vl = van_loan(A, Q, dt)
    assert np.allclose(Q_d, Q_vl, atol=1e-9 * max(1.0, np.abs(Q_vl).max()))


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_stationary_solution_symmetric_psd(n, seed):
    rng = np.random.default_rng(seed)
    A = random_stable(rng, n)
    G = np.tril(rng.normal(size=(n, n)))
    X = stationary_covariance(A, G @ G.T)
    assert np.array_equal(X, X.T)
    assert np.linalg.eigvalsh(X).min() > -1e-10
