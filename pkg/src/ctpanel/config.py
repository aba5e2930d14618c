"""TOML loaders for model and simulation-design files.

Errors name the offending field path, e.g. ``design.params.drift``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli

from .ctsem.model import CtModelSpec, CtParams
from .errors import ConfigError
from .sim import PredictorProcess, SimDesign

MODEL_KEYS = {"n_latent", "n_manifest", "predictor_channels", "drift_form", "diffusion_form", "grouping",
              "latent_names", "manifest_names", "free_cint", "init"}
FIT_KEYS = {"starts", "seed", "ftol", "maxiter", "top_k", "compute_se"}


def read_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: file not found") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from exc


@dataclass
class FitOptions:
    starts: int = 5
    seed: int = 0
    ftol: float = 1e-7
    maxiter: int = 2000
    top_k: int = 1
    compute_se: bool = True


def _check_keys(section: dict, allowed: set, path: str):
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown field")


def parse_model_config(data: dict, path: str = "model") -> tuple[CtModelSpec, FitOptions]:
    model = data.get("model", {})
    if not isinstance(model, dict):
        raise ConfigError(f"{path}.model: expected a table")
    _check_keys(model, MODEL_KEYS, f"{path}.model")
    kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in model.items()}
    for key in ("n_latent", "n_manifest"):
        if key in kwargs and not isinstance(kwargs[key], int):
            raise ConfigError(f"{path}.model.{key}: expected an integer")
    try:
        spec = CtModelSpec(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{path}.{exc}") from exc
    fit = data.get("fit", {})
    _check_keys(fit, FIT_KEYS, f"{path}.fit")
    opts = FitOptions(**fit)
    if not isinstance(opts.starts, int) or opts.starts < 1:
        raise ConfigError(f"{path}.fit.starts: expected a positive integer")
    if not isinstance(opts.seed, int):
        raise ConfigError(f"{path}.fit.seed: expected an integer")
    return spec, opts


def load_model_config(path) -> tuple[CtModelSpec, FitOptions]:
    return parse_model_config(read_toml(path), str(Path(path).name))


def _matrix(value, shape, path):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: expected numbers") from exc
    if arr.size == 1 and shape is not None and int(np.prod(shape)) == 1:
        arr = arr.reshape(shape)
    if shape is not None and arr.shape != tuple(shape):
        raise ConfigError(f"{path}: expected shape {tuple(shape)}, got {arr.shape}")
    return arr


def _group_params(base: dict, override: dict, n: int, p: int, path: str) -> CtParams:
    merged = {**base, **override}
    src = override if ("drift" in override or "drift_diag" in override) else base
    if "drift_diag" in src:
        drift = np.diag(_matrix(src["drift_diag"], (n,), f"{path}.drift_diag"))
    elif "drift" in src:
        drift = _matrix(src["drift"], (n, n), f"{path}.drift")
    else:
        raise ConfigError(f"{path}.drift: missing (give drift or drift_diag)")
    if not np.all(np.linalg.eigvals(drift).real < 0):
        raise ConfigError(f"{path}.drift: not stable (eigenvalue real parts must be negative)")
    for key in ("predictor_effects", "loadings"):
        if key not in merged:
            raise ConfigError(f"{path}.{key}: missing")
    loadings = _matrix(merged["loadings"], None, f"{path}.loadings")
    loadings = loadings.reshape(-1, n) if loadings.size % n == 0 else None
    if loadings is None:
        raise ConfigError(f"{path}.loadings: width must equal n_latent={n}")
    m = loadings.shape[0]
    err = _matrix(merged.get("manifest_error_var", 0.25), None, f"{path}.manifest_error_var")
    err = np.diag(np.broadcast_to(err.reshape(-1) if err.ndim < 2 else np.diag(err), (m,)).astype(float))
    return CtParams(
        drift=drift,
        diffusion_chol=_matrix(merged.get("diffusion_chol", np.eye(n).tolist()), (n, n), f"{path}.diffusion_chol"),
        predictor_effects=_matrix(merged["predictor_effects"], (n, p), f"{path}.predictor_effects"),
        loadings=loadings,
        manifest_intercept=_matrix(merged.get("manifest_intercept", [0.0] * m), (m,), f"{path}.manifest_intercept"),
        manifest_error_var=err,
        cint=_matrix(merged.get("cint", [0.0] * n), (n,), f"{path}.cint"),
    )


@dataclass
class DesignConfig:
    design: SimDesign
    spec: CtModelSpec
    fit: FitOptions = field(default_factory=FitOptions)
    compare_free: bool = True


def parse_design(data: dict, path: str = "design") -> DesignConfig:
    def need(key, kind):
        if key not in data:
            raise ConfigError(f"{path}.{key}: missing")
        v = data[key]
        if kind is int and not isinstance(v, int):
            raise ConfigError(f"{path}.{key}: expected an integer")
        if kind is float and not isinstance(v, (int, float)):
            raise ConfigError(f"{path}.{key}: expected a number")
        return v

    n_groups = need("n_groups", int)
    channels = data.get("predictor_channels")
    if not isinstance(channels, list) or not channels:
        raise ConfigError(f"{path}.predictor_channels: expected a non-empty list")
    params = data.get("params")
    if not isinstance(params, dict):
        raise ConfigError(f"{path}.params: expected a table")
    overrides = data.get("groups", [])
    if not isinstance(overrides, list) or not all(isinstance(o, dict) for o in overrides):
        raise ConfigError(f"{path}.groups: expected an array of tables")
    first = overrides[0] if overrides else {}
    src = params if ("drift" in params or "drift_diag" in params) else first
    if "drift_diag" in src:
        n = len(src["drift_diag"])
    elif "drift" in src:
        n = len(src["drift"])
    else:
        raise ConfigError(f"{path}.params.drift: missing (give drift or drift_diag)")
    p = len(channels)
    if overrides and len(overrides) != n_groups:
        raise ConfigError(f"{path}.groups: expected {n_groups} entries, got {len(overrides)}")
    true_params = [
        _group_params(params, overrides[g] if overrides else {}, n, p,
                      f"{path}.groups[{g}]" if overrides else f"{path}.params")
        for g in range(n_groups)
    ]
    procs = {}
    pred = data.get("predictors", {})
    default = pred.get("default", {"kind": "poisson", "rate": 0.5})
    for c in channels:
        spec_c = pred.get(c, default)
        try:
            procs[c] = PredictorProcess(str(spec_c.get("kind", "poisson")), float(spec_c.get("rate", 0.5)))
        except (AttributeError, TypeError, ValueError) as exc:
            raise ConfigError(f"{path}.predictors.{c}: expected {{kind, rate}}") from exc
    try:
        design = SimDesign(
            n_groups=n_groups,
            members_per_group=need("members_per_group", int),
            n_slices=need("n_slices", int),
            slice_len=float(data.get("slice_len", 10.0)),
            true_params=true_params,
            predictor_channels=tuple(channels),
            predictor_process=procs,
            seed=int(data.get("seed", 0)),
            manifest=str(data.get("manifest", "continuous")),
            thresholds=tuple(data.get("thresholds", (-0.5, 0.5))),
        )
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    fit_section = dict(data.get("fit", {}))
    compare_free = bool(fit_section.pop("compare_free", True))
    model_section = {k: fit_section.pop(k) for k in list(fit_section) if k in MODEL_KEYS}
    model_section.setdefault("n_latent", n)
    model_section.setdefault("n_manifest", true_params[0].n_manifest)
    model_section.setdefault("predictor_channels", channels)
    spec, opts = parse_model_config({"model": model_section, "fit": fit_section}, path)
    return DesignConfig(design, spec, opts, compare_free)


def load_design(path) -> DesignConfig:
    return parse_design(read_toml(path), str(Path(path).name))
