"""Synthetic panels from known parameters, and recovery / model-selection experiments.

Randomness comes from numpy's PCG64 (``numpy.random.default_rng``). Draw order
is fixed: per group, per member, predictors for all slices first, then the
initial state, then per slice the transition noise and measurement noise.
Replicate seeds are spawned from the master seed with ``SeedSequence``.
"""
from __future__ import annotations

import itertools
import logging
import multiprocessing
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .ctsem.dynamics import discretize_dynamics
from .ctsem.estimate import FitResult, fit
from .ctsem.model import CtModelSpec, CtParams
from .errors import ConfigError
from .panel import CHANNEL_INDEX, CHANNELS, BehaviorPanel, SliceRecord

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PredictorProcess:
    kind: str = "poisson"  # poisson | bernoulli | normal
    rate: float = 0.5

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "poisson":
            return rng.poisson(self.rate, size).astype(float)
        if self.kind == "bernoulli":
            return (rng.random(size) < self.rate).astype(float)
        if self.kind == "normal":
            return rng.normal(0.0, self.rate, size)
        raise ConfigError(f"predictors.kind: unknown generator {self.kind!r}")


@dataclass
class SimDesign:
    n_groups: int
    members_per_group: int
    n_slices: int
    slice_len: float
    true_params: list               # one CtParams per group
    predictor_channels: tuple
    predictor_process: dict = field(default_factory=dict)
    seed: int = 0
    manifest: str = "continuous"    # or "ordinal"
    thresholds: tuple = (-0.5, 0.5)

    def __post_init__(self):
        if min(self.n_groups, self.members_per_group, self.n_slices) < 1:
            raise ConfigError("design: n_groups, members_per_group and n_slices must be >= 1")
        if not self.slice_len > 0:
            raise ConfigError("design.slice_len: must be positive")
        if isinstance(self.true_params, CtParams):
            self.true_params = [self.true_params] * self.n_groups
        if len(self.true_params) != self.n_groups:
            raise ConfigError("design.true_params: need one parameter set per group")
        self.predictor_channels = tuple(self.predictor_channels)
        for c in self.predictor_channels:
            if c not in CHANNEL_INDEX:
                raise ConfigError(f"design.predictor_channels: unknown channel {c!r}")
        for p in self.true_params:
            if p.n_predictor != len(self.predictor_channels):
                raise ConfigError("design.true_params: predictor_effects width must match predictor_channels")
        if self.manifest not in ("continuous", "ordinal"):
            raise ConfigError(f"design.manifest: {self.manifest!r} not in continuous|ordinal")

    @property
    def group_ids(self) -> list:
        return [f"g{i + 1}" for i in range(self.n_groups)]

    def with_seed(self, seed: int) -> "SimDesign":
        return replace(self, seed=int(seed))


def _mvn(rng: np.random.Generator, cov: np.ndarray) -> np.ndarray:
    # eigen square root: works for singular (e.g. zero) covariances
    w, V = np.linalg.eigh(0.5 * (cov + cov.T))
    return V @ (np.sqrt(np.clip(w, 0.0, None)) * rng.standard_normal(len(w)))


def _ordinal(y: np.ndarray, thresholds) -> np.ndarray:
    return np.searchsorted(np.asarray(thresholds), y, side="right").astype(float)


def simulate(design: SimDesign, return_latents: bool = False):
    """Simulate one BehaviorPanel per group.

    Latents follow the exact discrete-time transition of the OU process over
    each slice interval, receive the predictor impulse ``M chi_t`` at each slice
    midpoint, and are read out through the group's loadings plus Gaussian error.
    Channels not listed in ``design.predictor_channels`` are 0.
    """
    rng = np.random.default_rng(np.random.SeedSequence(design.seed))
    pidx = [CHANNEL_INDEX[c] for c in design.predictor_channels]
    T = design.n_slices
    panels, latents = [], {}
    for gid, params in zip(design.group_ids, design.true_params):
        A_d, b_d, Q_d = discretize_dynamics(params.drift, params.cint, params.diffusion, design.slice_len)
        mu0, P0 = params.initial()
        M, L, tau, R = (params.predictor_effects, params.loadings, params.manifest_intercept,
                        params.manifest_error_var)
        panel = BehaviorPanel(gid)
        for k in range(design.members_per_group):
            member = f"{gid}m{k + 1}"
            X = np.zeros((T, len(pidx)))
            for j, c in enumerate(design.predictor_channels):
                X[:, j] = design.predictor_process.get(c, PredictorProcess()).draw(rng, T)
            x = mu0 + _mvn(rng, P0)
            xs = np.zeros((T, params.n_latent))
            ys = np.zeros((T, params.n_manifest))
            for t in range(T):
                if t > 0:
                    x = A_d @ x + b_d + _mvn(rng, Q_d)
                x = x + M @ X[t]
                xs[t] = x
                ys[t] = tau + L @ x + _mvn(rng, R)
            y = ys[:, 0]
            if design.manifest == "ordinal":
                y = _ordinal(y, design.thresholds)
            recs = []
            for t in range(T):
                vals = [0.0] * len(CHANNELS)
                for j, ci in enumerate(pidx):
                    vals[ci] = float(X[t, j])
                start = t * design.slice_len
                recs.append(SliceRecord(t, start, start + design.slice_len, start + 0.5 * design.slice_len,
                                        tuple(vals), float(y[t])))
            panel.members[member] = recs
            latents[(gid, member)] = xs
        panels.append(panel)
    return (panels, latents) if return_latents else panels


# -- recovery experiments ----------------------------------------------------------------

@dataclass
class ReplicateResult:
    seed: int
    converged: bool
    drift_error: list
    loading_error: list
    effect_error: list
    drift_sign_ok: list
    loading_sign_ok: list
    aic_constrained: Optional[float] = None
    aic_free: Optional[float] = None
    seconds: float = 0.0

    @property
    def constrained_wins(self) -> Optional[bool]:
        if self.aic_constrained is None or self.aic_free is None:
            return None
        return self.aic_constrained < self.aic_free


@dataclass
class RecoveryReport:
    replicates: list

    def _flat(self, attr):
        return np.concatenate([np.abs(np.asarray(getattr(r, attr), dtype=float)).ravel() for r in self.replicates])

    @property
    def drift_mae(self) -> float:
        return float(self._flat("drift_error").mean())

    @property
    def loading_mae(self) -> float:
        return float(self._flat("loading_error").mean())

    @property
    def effect_mae(self) -> float:
        return float(self._flat("effect_error").mean())

    @property
    def sign_recovery_rate(self) -> float:
        ok = np.concatenate([np.ravel(r.drift_sign_ok + r.loading_sign_ok) for r in self.replicates])
        return float(np.mean(ok))

    @property
    def constrained_wins_rate(self) -> Optional[float]:
        wins = [r.constrained_wins for r in self.replicates if r.constrained_wins is not None]
        return float(np.mean(wins)) if wins else None

    @property
    def converged_rate(self) -> float:
        return float(np.mean([r.converged for r in self.replicates]))

    def to_dict(self) -> dict:
        return {
            "n_replicates": len(self.replicates),
            "drift_mae": self.drift_mae,
            "loading_mae": self.loading_mae,
            "effect_mae": self.effect_mae,
            "sign_recovery_rate": self.sign_recovery_rate,
            "constrained_wins_rate": self.constrained_wins_rate,
            "converged_rate": self.converged_rate,
            "replicates": [
                {**vars(r), "constrained_wins": r.constrained_wins} for r in self.replicates
            ],
        }


def align_latents(est: dict, truth: list, groups: Sequence) -> tuple:
    """Best latent permutation (exhaustive) matching estimates to the truth.

    Latents of a diagonal-drift model are exchangeable, so estimates carry an
    arbitrary order; the permutation minimizing squared error over drift
    diagonals, loadings and effects is used.
    """
    n = truth[0].n_latent
    best = None
    for perm in itertools.permutations(range(n)):
        perm = list(perm)
        err = 0.0
        for g, tp in zip(groups, truth):
            ep = est[g]
            err += np.sum((np.diag(ep.drift)[perm] - np.diag(tp.drift)) ** 2)
            err += np.sum((ep.loadings[:, perm] - tp.loadings) ** 2)
            err += np.sum((ep.predictor_effects[perm] - tp.predictor_effects) ** 2)
        if best is None or err < best[0]:
            best = (err, perm)
    return tuple(best[1])


def replicate_errors(result: FitResult, design: SimDesign) -> dict:
    """Signed errors and sign agreement after latent alignment.

    Parameters shared across groups in the fit (everything but loadings in
    constrained mode) are scored once rather than once per group.
    """
    groups = design.group_ids
    perm = list(align_latents(result.params, design.true_params, groups))
    shared = result.spec.grouping == "constrained"
    d_err, l_err, e_err, d_ok, l_ok = [], [], [], [], []
    for i, (g, tp) in enumerate(zip(groups, design.true_params)):
        ep = result.params[g]
        if not shared or i == 0:
            ed = np.diag(ep.drift)[perm]
            td = np.diag(tp.drift)
            d_err += list(ed - td)
            d_ok += [bool(np.sign(a) == np.sign(b)) for a, b in zip(ed, td)]
            e_err += list((ep.predictor_effects[perm] - tp.predictor_effects).ravel())
        el = ep.loadings[:, perm].ravel()
        tl = tp.loadings.ravel()
        l_err += list(el - tl)
        l_ok += [bool(np.sign(a) == np.sign(b)) for a, b in zip(el, tl)]
    return dict(drift_error=[float(v) for v in d_err], loading_error=[float(v) for v in l_err],
                effect_error=[float(v) for v in e_err], drift_sign_ok=d_ok, loading_sign_ok=l_ok)


def replicate_seeds(master: int, n: int) -> list:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master).spawn(n)]


def run_replicate(design: SimDesign, spec: CtModelSpec, *, compare_free: bool = True, starts: int = 5,
                  fit_seed: int = 0, compute_se: bool = False) -> ReplicateResult:
    t0 = time.perf_counter()
    panels = simulate(design)
    res_c = fit(spec.with_grouping("constrained"), panels, starts=starts, seed=fit_seed,
                compute_se=compute_se, standardized=False)
    errs = replicate_errors(res_c, design)
    aic_free = None
    if compare_free:
        res_f = fit(spec.with_grouping("free"), panels, starts=starts, seed=fit_seed,
                    compute_se=False, standardized=False)
        aic_free = res_f.aic
    return ReplicateResult(design.seed, res_c.converged, aic_constrained=res_c.aic, aic_free=aic_free,
                           seconds=time.perf_counter() - t0, **errs)


def recovery_experiment(design: SimDesign, n_replicates: int, spec: CtModelSpec | None = None, *,
                        compare_free: bool = True, starts: int = 5, workers: int = 1) -> RecoveryReport:
    """Simulate, fit and score ``n_replicates`` independent data sets.

    Per-replicate seeds are spawned from ``design.seed``. ``workers > 1`` runs
    replicates in separate processes; results keep replicate order.
    """
    if n_replicates < 1:
        raise ValueError("n_replicates must be >= 1")
    if spec is None:
        spec = spec_for_design(design)
    designs = [design.with_seed(s) for s in replicate_seeds(design.seed, n_replicates)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers, mp_context=multiprocessing.get_context("spawn")) as pool:
            futs = [pool.submit(run_replicate, d, spec, compare_free=compare_free, starts=starts) for d in designs]
            reps = [f.result() for f in futs]
    else:
        reps = []
        for i, d in enumerate(designs):
            reps.append(run_replicate(d, spec, compare_free=compare_free, starts=starts))
            log.info("replicate %d/%d done in %.1fs", i + 1, n_replicates, reps[-1].seconds)
    return RecoveryReport(reps)


def spec_for_design(design: SimDesign, **overrides) -> CtModelSpec:
    tp = design.true_params[0]
    kwargs = dict(n_latent=tp.n_latent, n_manifest=tp.n_manifest, predictor_channels=design.predictor_channels)
    kwargs.update(overrides)
    return CtModelSpec(**kwargs)
