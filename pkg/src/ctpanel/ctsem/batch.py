"""Batched, differentiable negative log-likelihood over all subjects (JAX).

Subjects are padded to a common length; padded steps use a zero-length interval
and carry no observation, so they leave the filter untouched. Intervals are
discretized once per distinct length and group, then gathered per step.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp  # noqa: E402
from jax.scipy.linalg import expm as jexpm  # noqa: E402

from .kalman import SubjectSeries  # noqa: E402
from .model import CtModelSpec, ParamLayout  # noqa: E402

LOG_2PI = float(np.log(2.0 * np.pi))
PENALTY = 1e12


@dataclass
class BatchData:
    y: np.ndarray         # (S, T, m), 0 where missing
    mask: np.ndarray      # (S, T, m)
    X: np.ndarray         # (S, T, p)
    dt_index: np.ndarray  # (S, T) into dts
    dts: np.ndarray       # (U,), dts[0] == 0
    group: np.ndarray     # (S,)

    def as_tuple(self):
        return (jnp.asarray(self.y), jnp.asarray(self.mask), jnp.asarray(self.X),
                jnp.asarray(self.dt_index), jnp.asarray(self.dts), jnp.asarray(self.group))


def prepare_batch(subjects: Sequence[SubjectSeries], groups: Sequence) -> BatchData:
    gidx = {g: i for i, g in enumerate(groups)}
    S = len(subjects)
    T = max(len(s) for s in subjects)
    m = subjects[0].manifest.shape[1]
    p = subjects[0].predictors.shape[1]
    y = np.zeros((S, T, m))
    mask = np.zeros((S, T, m))
    X = np.zeros((S, T, p))
    raw_dt = np.zeros((S, T))
    for i, s in enumerate(subjects):
        n = len(s)
        obs = ~np.isnan(s.manifest)
        y[i, :n] = np.where(obs, s.manifest, 0.0)
        mask[i, :n] = obs
        X[i, :n] = np.nan_to_num(s.predictors, nan=0.0)
        raw_dt[i, 1:n] = np.diff(s.times)
    dts, inv = np.unique(np.concatenate([[0.0], raw_dt.ravel()]), return_inverse=True)
    dt_index = inv[1:].reshape(S, T)
    group = np.array([gidx[s.group] for s in subjects], dtype=int)
    return BatchData(y, mask, X, dt_index, dts, group)


def _lyapunov(A, Q):
    n = A.shape[0]
    eye = jnp.eye(n)
    K = jnp.kron(A, eye) + jnp.kron(eye, A)
    X = jnp.linalg.solve(K, -Q.reshape(-1)).reshape(n, n)
    return 0.5 * (X + X.T)


def _discretize(A, b, Qinf, dt):
    n = A.shape[0]
    aug = jnp.zeros((n + 1, n + 1)).at[:n, :n].set(A).at[:n, n].set(b)
    E = jexpm(aug * dt)
    A_d = E[:n, :n]
    Q_d = Qinf - A_d @ Qinf @ A_d.T
    return A_d, E[:n, n], 0.5 * (Q_d + Q_d.T)


def _build_loglik(layout: ParamLayout):
    spec = layout.spec
    n = spec.n_latent
    free_init = spec.init == "free"

    def group_arrays(theta, dts):
        blocks = layout.split(layout.natural(theta, xp=jnp), xp=jnp)
        A = blocks["drift"]
        b = blocks["cint"]
        Gc = blocks["diffusion_chol"]
        Q = Gc @ jnp.swapaxes(Gc, -1, -2)
        Qinf = jax.vmap(_lyapunov)(A, Q)
        disc = jax.vmap(lambda A_, b_, Qi: jax.vmap(lambda dt: _discretize(A_, b_, Qi, dt))(dts))
        A_d, b_d, Q_d = disc(A, b, Qinf)
        if free_init:
            mu0 = blocks["init_mean"]
            P0 = jax.vmap(jnp.diag)(blocks["init_var"])
        else:
            mu0 = -jnp.linalg.solve(A, b[..., None])[..., 0]
            P0 = Qinf
        return dict(A_d=A_d, b_d=b_d, Q_d=Q_d, mu0=mu0, P0=P0, M=blocks["predictor_effects"],
                    L=blocks["loadings"], tau=blocks["manifest_intercept"], R=blocks["manifest_error_var"])

    eye_n = jnp.eye(n)

    def subject_loglik(ga, g, y, mask, X, dt_index):
        A_d, b_d, Q_d = ga["A_d"][g], ga["b_d"][g], ga["Q_d"][g]
        M, L, tau, R = ga["M"][g], ga["L"][g], ga["tau"][g], ga["R"][g]

        def step(carry, inp):
            mu, P = carry
            k, x_t, y_t, mk = inp
            mu = A_d[k] @ mu + b_d[k] + M @ x_t
            P = A_d[k] @ P @ A_d[k].T + Q_d[k]
            H = L * mk[:, None]
            S = H @ P @ H.T + jnp.diag(R * mk)
            S = mk[:, None] * S * mk[None, :] + jnp.diag(1.0 - mk)
            S = 0.5 * (S + S.T)
            C = jnp.linalg.cholesky(S)
            r = mk * (y_t - tau - L @ mu)
            z = jax.scipy.linalg.solve_triangular(C, r, lower=True)
            ll = -0.5 * (mk.sum() * LOG_2PI + 2.0 * jnp.sum(jnp.log(jnp.diag(C))) + z @ z)
            K = jax.scipy.linalg.cho_solve((C, True), H @ P).T
            mu = mu + K @ r
            IKH = eye_n - K @ H
            P = IKH @ P @ IKH.T + (K * (R * mk)) @ K.T
            P = 0.5 * (P + P.T)
            return (mu, P), ll

        _, lls = jax.lax.scan(step, (ga["mu0"][g], ga["P0"][g]), (dt_index, X, y, mask))
        return lls.sum()

    def total_loglik(theta, y, mask, X, dt_index, dts, group):
        ga = group_arrays(theta, dts)
        per_subject = jax.vmap(lambda g, yy, mk, xx, di: subject_loglik(ga, g, yy, mk, xx, di))(
            group, y, mask, X, dt_index)
        return per_subject.sum(), per_subject

    return total_loglik


@functools.lru_cache(maxsize=32)
def _compiled(spec: CtModelSpec, n_groups: int):
    layout = ParamLayout.build(spec, tuple(range(n_groups)))
    total = _build_loglik(layout)

    def neg(theta, *data):
        return -total(theta, *data)[0]

    return (
        jax.jit(jax.value_and_grad(neg)),
        jax.jit(neg),
        jax.jit(lambda theta, *data: total(theta, *data)[1]),
    )


class BatchObjective:
    """Negative log-likelihood and gradient over all subjects for the optimizer.

    Returns a large penalty with zero gradient when the drift is unstable or
    the filter produces non-finite values, so line searches back off.
    """

    def __init__(self, layout: ParamLayout, subjects: Sequence[SubjectSeries]):
        self.layout = layout
        self.data = prepare_batch(subjects, layout.groups)
        self._args = self.data.as_tuple()
        self._vg, self._v, self._per = _compiled(layout.spec, len(layout.groups))
        self.n_evals = 0

    def _stable(self, theta) -> bool:
        if self.layout.spec.drift_form == "diagonal":
            return True
        A = self.layout.split(self.layout.natural(np.asarray(theta)))["drift"]
        return bool(np.all(np.linalg.eigvals(A).real < 0))

    def __call__(self, theta):
        self.n_evals += 1
        theta = np.asarray(theta, dtype=float)
        if not self._stable(theta):
            return PENALTY, np.zeros_like(theta)
        f, g = self._vg(jnp.asarray(theta), *self._args)
        f = float(f)
        g = np.asarray(g, dtype=float)
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            return PENALTY, np.zeros_like(theta)
        return f, g

    def value(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if not self._stable(theta):
            return PENALTY
        f = float(self._v(jnp.asarray(theta), *self._args))
        return f if np.isfinite(f) else PENALTY

    def gradient(self, theta) -> np.ndarray:
        return self(theta)[1]

    def loglik(self, theta) -> float:
        return -self.value(theta)

    def per_subject(self, theta) -> np.ndarray:
        return np.asarray(self._per(jnp.asarray(np.asarray(theta, dtype=float)), *self._args))
