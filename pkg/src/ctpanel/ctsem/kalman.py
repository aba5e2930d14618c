"""Reference Kalman filter for one subject's slice series (numpy, unbatched)."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import NumericalError
from .dynamics import discretize_dynamics
from .model import CtParams

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


def _rows(values, T):
    arr = np.asarray(values, dtype=float)
    return arr if arr.ndim == 2 else arr.reshape(T, -1)


@dataclass
class SubjectSeries:
    """Observation times, predictor impulses ``(T, p)`` and manifests ``(T, m)``.

    NaN manifests are missing and skip the update; NaN predictors act as zero
    impulses.
    """

    times: np.ndarray
    predictors: np.ndarray
    manifest: np.ndarray
    group: object = None
    member: Optional[str] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        T = len(self.times)
        self.predictors = _rows(self.predictors, T)
        self.manifest = _rows(self.manifest, T)
        if T > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("slice times must be strictly increasing")

    def __len__(self):
        return len(self.times)


@dataclass
class KalmanResult:
    loglik: float
    means: np.ndarray
    covs: np.ndarray
    floor_events: int = 0


def _psd_floor(P, floor=0.0):
    P = 0.5 * (P + P.T)
    w, V = np.linalg.eigh(P)
    if w.min() < floor:
        return (V * np.maximum(w, floor)) @ V.T, True
    return P, False


def kalman_loglik(params: CtParams, subject: SubjectSeries) -> KalmanResult:
    """One-step-ahead prediction error decomposition of the subject's likelihood.

    At each slice: propagate over the elapsed interval, add the predictor
    impulse ``M chi_t`` to the state mean, then update on the observed manifests.
    """
    n = params.n_latent
    T = len(subject)
    means = np.zeros((T, n))
    covs = np.zeros((T, n, n))
    if T == 0:
        return KalmanResult(0.0, means, covs)
    A, b, Q = params.drift, params.cint, params.diffusion
    M, L, tau, R = params.predictor_effects, params.loadings, params.manifest_intercept, params.manifest_error_var
    mu, P = params.initial()
    mu, P = mu.copy(), P.copy()
    chi = np.nan_to_num(subject.predictors, nan=0.0)
    cache = {}
    loglik = 0.0
    floors = 0
    for t in range(T):
        if t > 0:
            dt = subject.times[t] - subject.times[t - 1]
            if dt not in cache:
                cache[dt] = discretize_dynamics(A, b, Q, dt)
            A_d, b_d, Q_d = cache[dt]
            mu = A_d @ mu + b_d
            P = A_d @ P @ A_d.T + Q_d
        mu = mu + M @ chi[t]
        y = subject.manifest[t]
        obs = ~np.isnan(y)
        if obs.any():
            H = L[obs]
            S = H @ P @ H.T + R[np.ix_(obs, obs)]
            S = 0.5 * (S + S.T)
            try:
                C = np.linalg.cholesky(S)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"innovation covariance not positive definite at slice {t}") from exc
            r = y[obs] - tau[obs] - H @ mu
            z = np.linalg.solve(C, r)
            loglik += -0.5 * (obs.sum() * LOG_2PI + 2.0 * np.log(np.diag(C)).sum() + z @ z)
            K = np.linalg.solve(S, H @ P).T
            mu = mu + K @ r
            I_KH = np.eye(n) - K @ H
            P = I_KH @ P @ I_KH.T + K @ R[np.ix_(obs, obs)] @ K.T
        P, floored = _psd_floor(P)
        if floored:
            floors += 1
            log.debug("covariance eigenvalue floor applied at slice %d", t)
        means[t] = mu
        covs[t] = P
    return KalmanResult(float(loglik), means, covs, floors)
