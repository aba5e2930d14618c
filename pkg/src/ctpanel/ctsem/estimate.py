"""Maximum-likelihood fitting, AIC, standardized effects and link ranking."""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .. import SCHEMA_VERSION
from ..errors import DataError
from ..panel import BehaviorPanel
from .batch import BatchObjective
from .kalman import SubjectSeries
from .model import CtModelSpec, CtParams, ParamLayout

log = logging.getLogger(__name__)

IDENTIFICATION_NOTE = (
    "diffusion diagonal fixed to 1; continuous intercept fixed to 0 unless free_cint; "
    "latent signs normalized to non-negative mean loading; predictor effects are impulses "
    "at observation times; missing predictors enter as zero impulses"
)


def aic(loglik: float, k: int) -> float:
    if k < 0:
        raise ValueError("k must be non-negative")
    return 2.0 * k - 2.0 * loglik


@dataclass
class StartResult:
    seed: Optional[int]
    loglik: float
    converged: bool
    n_iter: int
    message: str


@dataclass
class Effect:
    source: str
    target: str
    estimate: Optional[float]
    sd: Optional[float] = None
    per_group: dict = field(default_factory=dict)


@dataclass
class StandardizedTable:
    predictor_effects: list
    loadings: list
    flagged_channels: list = field(default_factory=list)

    def to_dict(self) -> dict:
        def eff(e):
            return {"source": e.source, "target": e.target, "estimate": e.estimate, "sd": e.sd,
                    "per_group": e.per_group}
        return {"predictor_effects": [eff(e) for e in self.predictor_effects],
                "loadings": [eff(e) for e in self.loadings],
                "flagged_channels": list(self.flagged_channels)}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizedTable":
        return cls([Effect(**e) for e in d["predictor_effects"]], [Effect(**e) for e in d["loadings"]],
                   list(d.get("flagged_channels", [])))


@dataclass
class FitResult:
    spec: CtModelSpec
    groups: tuple
    theta: np.ndarray
    params: dict
    loglik: float
    k: int
    aic: float
    converged: bool
    std_errors: dict
    starts: list
    standardized: Optional[StandardizedTable] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.aic != aic(self.loglik, self.k):
            raise ValueError("aic must equal 2k - 2 loglik")


# -- data preparation ------------------------------------------------------------

def panel_subjects(spec: CtModelSpec, panels: Sequence[BehaviorPanel], min_length: int = 2):
    """Turn panels into SubjectSeries; also returns per-channel predictor missing counts."""
    if spec.n_manifest != 1:
        raise DataError("panels carry a single manifest (curiosity); n_manifest must be 1")
    subjects = []
    missing = {c: 0 for c in spec.predictor_channels}
    for panel in panels:
        for member, recs in panel.members.items():
            times, X, y = panel.series(member, spec.predictor_channels)
            if len(times) < min_length:
                raise DataError(f"group {panel.group_id!r} member {member!r}: series shorter than {min_length}")
            for j, c in enumerate(spec.predictor_channels):
                missing[c] += int(np.isnan(X[:, j]).sum())
            subjects.append(SubjectSeries(times, X, y[:, None], panel.group_id, member))
    for c, k in missing.items():
        if k:
            log.info("predictor %s: %d missing values entered as zero impulses", c, k)
    return subjects, missing


def _check_groups(panels):
    ids = [p.group_id for p in panels]
    if not ids:
        raise DataError("no groups to fit")
    if len(set(ids)) != len(ids):
        raise DataError("duplicate group ids among panels")
    return tuple(ids)


# -- starting values and sign normalization ----------------------------------------

def default_start(layout: ParamLayout, subjects: Sequence[SubjectSeries]) -> dict:
    spec = layout.spec
    n, m, p = spec.n_latent, spec.n_manifest, spec.n_predictor
    y = np.concatenate([s.manifest for s in subjects])
    dts = np.concatenate([np.diff(s.times) for s in subjects if len(s) > 1])
    dt = float(np.median(dts)) if len(dts) else 1.0
    mean = np.nanmean(y, axis=0)
    var = np.nanvar(y, axis=0)
    var = np.where(np.isfinite(var) & (var > 0), var, 1.0)
    rates = np.geomspace(1.5, 0.1, n) / dt if n > 1 else np.array([0.5 / dt])
    latent_var = 0.5 / rates
    lam = np.sqrt(0.5 * var[:, None] / latent_var.sum()) * np.ones((m, n))
    base = CtParams(
        drift=np.diag(-rates),
        diffusion_chol=np.eye(n),
        predictor_effects=np.zeros((n, p)),
        loadings=lam,
        manifest_intercept=np.nan_to_num(mean),
        manifest_error_var=np.diag(0.5 * var),
        cint=np.zeros(n),
        init_mean=np.zeros(n) if spec.init == "free" else None,
        init_cov=np.diag(latent_var) if spec.init == "free" else None,
    )
    return {g: base.copy() for g in layout.groups}


def perturbed_start(layout: ParamLayout, theta0: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    theta = theta0.copy()
    scale = np.where(np.isin(np.arange(len(theta)), _transformed_positions(layout)), 0.5, 0.0)
    theta += rng.normal(size=len(theta)) * scale
    # identity-scale entries: jitter relative to their own magnitude
    ident = scale == 0
    theta[ident] += rng.normal(size=ident.sum()) * (0.3 * np.abs(theta[ident]) + 0.05)
    return theta


def _transformed_positions(layout: ParamLayout):
    pos = set()
    for g in range(len(layout.groups)):
        for j in np.nonzero(layout.index[g] >= 0)[0]:
            if layout.code[j] != 0:
                pos.add(int(layout.index[g, j]))
    return sorted(pos)


def _flip(params: CtParams, d: np.ndarray) -> CtParams:
    D = np.diag(d)
    return CtParams(
        drift=D @ params.drift @ D,
        diffusion_chol=D @ params.diffusion_chol @ D,
        predictor_effects=D @ params.predictor_effects,
        loadings=params.loadings @ D,
        manifest_intercept=params.manifest_intercept,
        manifest_error_var=params.manifest_error_var,
        cint=D @ params.cint,
        init_mean=None if params.init_mean is None else D @ params.init_mean,
        init_cov=None if params.init_cov is None else D @ params.init_cov @ D,
    )


def normalize_signs(layout: ParamLayout, theta: np.ndarray) -> np.ndarray:
    """Flip latent signs so each latent's mean loading is non-negative.

    The likelihood is invariant under ``x -> D x`` with ``D = diag(+-1)``. In
    constrained mode one ``D`` applies to all groups (shared effects must stay
    shared); in free mode each group is normalized on its own.
    """
    params = layout.unpack(theta)
    if layout.spec.grouping == "constrained" or len(layout.groups) == 1:
        total = sum(p.loadings.sum(axis=0) for p in params.values())
        d = np.where(total < 0, -1.0, 1.0)
        flipped = {g: _flip(p, d) for g, p in params.items()}
    else:
        flipped = {}
        for g, p in params.items():
            d = np.where(p.loadings.sum(axis=0) < 0, -1.0, 1.0)
            flipped[g] = _flip(p, d)
    return layout.pack(flipped)


# -- standard errors ----------------------------------------------------------------

def numerical_hessian(objective: BatchObjective, theta: np.ndarray, rel_step: float = 1e-4) -> np.ndarray:
    """Central differences of the analytic gradient, symmetrized."""
    k = len(theta)
    H = np.zeros((k, k))
    for i in range(k):
        h = rel_step * max(1.0, abs(theta[i]))
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        H[i] = (objective.gradient(tp) - objective.gradient(tm)) / (2.0 * h)
    return 0.5 * (H + H.T)


def standard_errors(layout: ParamLayout, objective: BatchObjective, theta: np.ndarray) -> dict:
    """Natural-scale standard errors; None for every entry when the Hessian is singular."""
    H = numerical_hessian(objective, theta)
    try:
        w = np.linalg.eigvalsh(H)
        if not np.all(np.isfinite(w)) or w.min() <= 1e-10 * max(1.0, abs(w).max()):
            raise np.linalg.LinAlgError("Hessian not positive definite")
        cov = np.linalg.inv(H)
        se_theta = np.sqrt(np.diag(cov))
    except np.linalg.LinAlgError:
        log.warning("singular Hessian at the optimum; standard errors reported missing")
        return {name: None for name in layout.names}
    se = np.abs(layout.jacobian_diag(theta)) * se_theta
    return {name: float(v) for name, v in zip(layout.names, se)}


# -- fitting ----------------------------------------------------------------------------

def fit(
    spec: CtModelSpec,
    panels: Sequence[BehaviorPanel],
    *,
    starts: int = 5,
    seed: int = 0,
    maxiter: int = 2000,
    ftol: float = 1e-7,
    compute_se: bool = True,
    standardized: bool = True,
    subjects: Sequence[SubjectSeries] | None = None,
    init_params: dict | None = None,
) -> FitResult:
    """Maximize the summed Kalman log-likelihood with L-BFGS from several starts.

    Start 0 is a data-driven default (or ``init_params``); the remaining starts
    perturb it with draws from ``numpy.random.default_rng(seed)``.
    """
    groups = _check_groups(panels)
    if subjects is None:
        subjects, missing = panel_subjects(spec, panels)
    else:
        missing = {}
    layout = ParamLayout.build(spec, groups)
    objective = BatchObjective(layout, subjects)
    start_params = init_params or default_start(layout, subjects)
    theta0 = layout.pack(start_params)
    rng = np.random.default_rng(seed)
    thetas = [theta0] + [perturbed_start(layout, theta0, rng) for _ in range(max(starts, 1) - 1)]

    best = None
    records = []
    for i, th in enumerate(thetas):
        res = minimize(objective, th, jac=True, method="L-BFGS-B",
                       options={"maxiter": maxiter, "ftol": ftol, "gtol": 1e-6, "maxcor": 20, "maxls": 50})
        ll = -float(res.fun)
        records.append(StartResult(i, ll, bool(res.success), int(res.nit), str(res.message)))
        log.debug("start %d: loglik %.6f, %d iterations, %s", i, ll, res.nit, res.message)
        if best is None or ll > best[1]:
            best = (res.x, ll, bool(res.success))

    theta = normalize_signs(layout, best[0])
    loglik = objective.loglik(theta)
    k = layout.n_params
    se = standard_errors(layout, objective, theta) if compute_se else {n: None for n in layout.names}
    result = FitResult(
        spec=spec,
        groups=groups,
        theta=theta,
        params=layout.unpack(theta),
        loglik=loglik,
        k=k,
        aic=aic(loglik, k),
        converged=best[2],
        std_errors=se,
        starts=records,
        metadata={"identification": IDENTIFICATION_NOTE, "predictor_missing": missing,
                  "seed": seed, "n_starts": len(thetas), "ftol": ftol},
    )
    if standardized:
        result.standardized = standardize(result, panels, require_converged=False)
    return result


# -- standardization and ranking ----------------------------------------------------------

def _pooled_sd(panels, spec):
    X, y = [], []
    for panel in panels:
        for member in panel.members:
            _, x_, y_ = panel.series(member, spec.predictor_channels)
            X.append(x_)
            y.append(y_)
    X = np.concatenate(X)
    y = np.concatenate(y)
    return np.nanstd(X, axis=0), float(np.nanstd(y))


def _summary(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    mean = float(np.mean(vals))
    sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    return mean, sd


def standardize(fit: FitResult, panels: Sequence[BehaviorPanel], require_converged: bool = True) -> StandardizedTable:
    """Rescale effects by source and target standard deviations.

    predictor -> latent: ``M[l, j] * sd(predictor j) / sd_stationary(latent l)``;
    latent -> manifest: ``loading[l] * sd_stationary(latent l) / sd(manifest)``.
    Group-specific values are summarized as mean and sample sd across groups.
    """
    if require_converged and not fit.converged:
        raise ValueError("standardize requires a converged fit")
    spec = fit.spec
    sd_x, sd_y = _pooled_sd(panels, spec)
    flagged = [c for c, s in zip(spec.predictor_channels, sd_x) if not (np.isfinite(s) and s > 0)]
    if flagged:
        warnings.warn(f"zero-variance predictor channels: {flagged}; standardized effects reported missing")
    effects, loads = [], []
    per_group_lat_sd = {g: np.sqrt(np.diag(p.stationary_cov())) for g, p in fit.params.items()}
    for l, lname in enumerate(spec.latent_names):
        for j, cname in enumerate(spec.predictor_channels):
            per = {}
            for g, p in fit.params.items():
                if cname in flagged:
                    per[g] = None
                else:
                    per[g] = float(p.predictor_effects[l, j] * sd_x[j] / per_group_lat_sd[g][l])
            mean, sd = _summary(per.values())
            effects.append(Effect(cname, lname, mean, sd, per))
        for i, mname in enumerate(spec.manifest_names):
            per = {}
            for g, p in fit.params.items():
                per[g] = float(p.loadings[i, l] * per_group_lat_sd[g][l] / sd_y) if sd_y > 0 else None
            mean, sd = _summary(per.values())
            loads.append(Effect(lname, mname, mean, sd, per))
    return StandardizedTable(effects, loads, flagged)


def format_effect(effect: Effect, digits: int = 3) -> str:
    if effect.estimate is None:
        return f"{effect.source} → {effect.target}: missing"
    return f"{effect.source} → {effect.target}: {effect.estimate:.{digits}f} ± {effect.sd or 0.0:.{digits}f}"


@dataclass
class LinkEdge:
    source: str
    target: str
    standardized_estimate: float
    sd: Optional[float]
    rank: int


@dataclass
class LinkReport:
    edges: list
    loadings: list

    def lines(self) -> list:
        return [f"{format_effect(Effect(e.source, e.target, e.standardized_estimate, e.sd))} (rank {e.rank})"
                for e in self.edges]


def rank_links(table: StandardizedTable, top_k: int = 1) -> LinkReport:
    """Keep the ``top_k`` strongest predictors per latent by |standardized estimate|.

    Equal magnitudes are ordered by channel name. Latent -> manifest loadings are
    all kept, ranked per manifest.
    """
    if not table.predictor_effects and not table.loadings:
        raise ValueError("empty standardized table")
    edges = []
    targets = []
    for e in table.predictor_effects:
        if e.target not in targets:
            targets.append(e.target)
    for tgt in targets:
        cands = [e for e in table.predictor_effects if e.target == tgt and e.estimate is not None]
        cands.sort(key=lambda e: (-abs(e.estimate), e.source))
        for r, e in enumerate(cands[:top_k], 1):
            edges.append(LinkEdge(e.source, tgt, e.estimate, e.sd, r))
    mtargets = []
    for e in table.loadings:
        if e.target not in mtargets:
            mtargets.append(e.target)
    for tgt in mtargets:
        cands = [e for e in table.loadings if e.target == tgt and e.estimate is not None]
        cands.sort(key=lambda e: (-abs(e.estimate), e.source))
        for r, e in enumerate(cands, 1):
            edges.append(LinkEdge(e.source, tgt, e.estimate, e.sd, r))
    loads = [e for e in table.loadings if e.estimate is not None]
    return LinkReport(edges, loads)


# -- serialization ----------------------------------------------------------------------

def spec_to_dict(spec: CtModelSpec) -> dict:
    return {
        "n_latent": spec.n_latent,
        "n_manifest": spec.n_manifest,
        "predictor_channels": list(spec.predictor_channels),
        "drift_form": spec.drift_form,
        "diffusion_form": spec.diffusion_form,
        "grouping": spec.grouping,
        "latent_names": list(spec.latent_names),
        "manifest_names": list(spec.manifest_names),
        "free_cint": spec.free_cint,
        "init": spec.init,
    }


def fit_to_dict(fit: FitResult) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "model": spec_to_dict(fit.spec),
        "groups": list(fit.groups),
        "loglik": fit.loglik,
        "k": fit.k,
        "aic": fit.aic,
        "converged": fit.converged,
        "params": {str(g): p.to_dict() for g, p in fit.params.items()},
        "theta": [float(t) for t in fit.theta],
        "std_errors": fit.std_errors,
        "starts": [vars(s) for s in fit.starts],
        "standardized": None if fit.standardized is None else fit.standardized.to_dict(),
        "metadata": fit.metadata,
    }


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    return obj


def dumps_fit(fit: FitResult) -> str:
    return json.dumps(_clean(fit_to_dict(fit)), indent=2, allow_nan=False) + "\n"


def write_fit(fit: FitResult, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_fit(fit))


def read_fit(path) -> FitResult:
    with open(path) as fh:
        d = json.load(fh)
    try:
        if d.get("schema_version") != SCHEMA_VERSION:
            raise DataError(f"{path}: schema_version {d.get('schema_version')!r}, expected {SCHEMA_VERSION!r}")
        spec = CtModelSpec(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d["model"].items()})
        params = {g: CtParams.from_dict(p) for g, p in d["params"].items()}
        return FitResult(
            spec=spec,
            groups=tuple(d["groups"]),
            theta=np.asarray(d["theta"], dtype=float),
            params=params,
            loglik=float(d["loglik"]),
            k=int(d["k"]),
            aic=float(d["aic"]),
            converged=bool(d["converged"]),
            std_errors=d["std_errors"],
            starts=[StartResult(**s) for s in d["starts"]],
            standardized=None if d.get("standardized") is None else StandardizedTable.from_dict(d["standardized"]),
            metadata=d.get("metadata", {}),
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed fit file ({exc!r})") from exc


def write_links(report: LinkReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["schema_version", "source", "target", "standardized_estimate", "sd", "rank"])
        for e in report.edges:
            w.writerow([SCHEMA_VERSION, e.source, e.target, repr(e.standardized_estimate),
                        "" if e.sd is None else repr(e.sd), e.rank])
