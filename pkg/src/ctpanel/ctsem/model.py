"""Model structure, parameter containers and the free-parameter layout.

Identification with a single manifest: diffusion diagonal is fixed to 1 (sets
the latent scale), the continuous intercept is fixed to 0 (the manifest
intercept carries the level), and latent signs are normalized after fitting so
that each latent's mean loading is non-negative.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ..errors import ConfigError
from ..panel import CHANNELS
from .dynamics import stationary_covariance

DEFAULT_LATENTS = ("ind_KIA", "inter_KIA", "ind_intensify", "inter_intensify")

IDENTITY, EXP, NEG_EXP = 0, 1, 2


@dataclass(frozen=True)
class CtModelSpec:
    n_latent: int = 4
    n_manifest: int = 1
    predictor_channels: tuple = CHANNELS
    drift_form: str = "diagonal"
    diffusion_form: str = "diagonal"
    grouping: str = "constrained"
    latent_names: tuple = DEFAULT_LATENTS
    manifest_names: tuple = ("curiosity",)
    free_cint: bool = False
    init: str = "stationary"

    def __post_init__(self):
        object.__setattr__(self, "predictor_channels", tuple(self.predictor_channels))
        if self.n_latent < 1:
            raise ConfigError("model.n_latent: must be >= 1")
        if self.n_manifest < 1:
            raise ConfigError("model.n_manifest: must be >= 1")
        if not self.predictor_channels:
            raise ConfigError("model.predictor_channels: must be non-empty")
        unknown = [c for c in self.predictor_channels if c not in CHANNELS]
        if unknown:
            raise ConfigError(f"model.predictor_channels: unknown channels {unknown}")
        if self.drift_form not in ("diagonal", "full"):
            raise ConfigError(f"model.drift_form: {self.drift_form!r} not in diagonal|full")
        if self.diffusion_form not in ("diagonal", "full"):
            raise ConfigError(f"model.diffusion_form: {self.diffusion_form!r} not in diagonal|full")
        if self.grouping not in ("constrained", "free"):
            raise ConfigError(f"model.grouping: {self.grouping!r} not in constrained|free")
        if self.init not in ("stationary", "free"):
            raise ConfigError(f"model.init: {self.init!r} not in stationary|free")
        names = tuple(self.latent_names)
        if len(names) != self.n_latent:
            names = tuple(DEFAULT_LATENTS[i] if i < len(DEFAULT_LATENTS) and self.n_latent == 4 else f"latent{i}"
                          for i in range(self.n_latent))
        object.__setattr__(self, "latent_names", names)
        mnames = tuple(self.manifest_names)
        if len(mnames) != self.n_manifest:
            mnames = ("curiosity",) if self.n_manifest == 1 else tuple(f"manifest{i}" for i in range(self.n_manifest))
        object.__setattr__(self, "manifest_names", mnames)

    @property
    def n_predictor(self) -> int:
        return len(self.predictor_channels)

    def with_grouping(self, grouping: str) -> "CtModelSpec":
        return replace(self, grouping=grouping)


@dataclass
class CtParams:
    """Natural-scale parameters for one group.

    ``init_mean`` / ``init_cov`` of None mean "stationary distribution".
    """

    drift: np.ndarray
    diffusion_chol: np.ndarray
    predictor_effects: np.ndarray
    loadings: np.ndarray
    manifest_intercept: np.ndarray
    manifest_error_var: np.ndarray
    cint: Optional[np.ndarray] = None
    init_mean: Optional[np.ndarray] = None
    init_cov: Optional[np.ndarray] = None

    def __post_init__(self):
        self.drift = np.atleast_2d(np.asarray(self.drift, dtype=float))
        n = self.drift.shape[0]
        self.diffusion_chol = np.atleast_2d(np.asarray(self.diffusion_chol, dtype=float))
        self.predictor_effects = np.asarray(self.predictor_effects, dtype=float).reshape(n, -1)
        self.loadings = np.asarray(self.loadings, dtype=float).reshape(-1, n)
        m = self.loadings.shape[0]
        self.manifest_intercept = np.asarray(self.manifest_intercept, dtype=float).reshape(m)
        self.manifest_error_var = np.atleast_2d(np.asarray(self.manifest_error_var, dtype=float)).reshape(m, m)
        self.cint = np.zeros(n) if self.cint is None else np.asarray(self.cint, dtype=float).reshape(n)
        if self.init_mean is not None:
            self.init_mean = np.asarray(self.init_mean, dtype=float).reshape(n)
        if self.init_cov is not None:
            self.init_cov = np.atleast_2d(np.asarray(self.init_cov, dtype=float)).reshape(n, n)

    @property
    def n_latent(self) -> int:
        return self.drift.shape[0]

    @property
    def n_manifest(self) -> int:
        return self.loadings.shape[0]

    @property
    def n_predictor(self) -> int:
        return self.predictor_effects.shape[1]

    @property
    def diffusion(self) -> np.ndarray:
        return self.diffusion_chol @ self.diffusion_chol.T

    def stationary_cov(self) -> np.ndarray:
        return stationary_covariance(self.drift, self.diffusion)

    def initial(self):
        """``(mu0, Sigma0)``, falling back to the stationary distribution."""
        mu0 = self.init_mean
        if mu0 is None:
            mu0 = -np.linalg.solve(self.drift, self.cint) if np.any(self.cint) else np.zeros(self.n_latent)
        cov0 = self.init_cov if self.init_cov is not None else self.stationary_cov()
        return mu0, cov0

    def to_dict(self) -> dict:
        out = {
            "drift": self.drift.tolist(),
            "cint": self.cint.tolist(),
            "diffusion_chol": self.diffusion_chol.tolist(),
            "predictor_effects": self.predictor_effects.tolist(),
            "loadings": self.loadings.tolist(),
            "manifest_intercept": self.manifest_intercept.tolist(),
            "manifest_error_var": self.manifest_error_var.tolist(),
            "init_mean": None if self.init_mean is None else self.init_mean.tolist(),
            "init_cov": None if self.init_cov is None else self.init_cov.tolist(),
        }
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "CtParams":
        return cls(**{k: (None if v is None else np.asarray(v, dtype=float)) for k, v in d.items()})

    def copy(self) -> "CtParams":
        return CtParams.from_dict(self.to_dict())


# (name, shape builder) in the order of the flat natural vector
def _block_shapes(n, m, p):
    return [
        ("drift", (n, n)),
        ("cint", (n,)),
        ("diffusion_chol", (n, n)),
        ("predictor_effects", (n, p)),
        ("loadings", (m, n)),
        ("manifest_intercept", (m,)),
        ("manifest_error_var", (m,)),
        ("init_mean", (n,)),
        ("init_var", (n,)),
    ]


@dataclass
class ParamLayout:
    """Maps an unconstrained vector ``theta`` to per-group natural parameters.

    ``index[g, j]`` is the theta position feeding natural entry ``j`` of group
    ``g`` (-1 for fixed entries), ``code[j]`` its transform.
    """

    spec: CtModelSpec
    groups: tuple
    index: np.ndarray
    code: np.ndarray
    fixed: np.ndarray
    names: list
    blocks: dict = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return len(self.names)

    @classmethod
    def build(cls, spec: CtModelSpec, groups: Sequence) -> "ParamLayout":
        groups = tuple(groups)
        G = len(groups)
        n, m, p = spec.n_latent, spec.n_manifest, spec.n_predictor
        blocks = {}
        offset = 0
        for name, shape in _block_shapes(n, m, p):
            size = int(np.prod(shape))
            blocks[name] = (offset, shape)
            offset += size
        P = offset
        code = np.zeros(P, dtype=int)
        fixed = np.zeros(P)
        free = np.zeros(P, dtype=bool)

        def entries(block):
            off, shape = blocks[block]
            return off, shape

        lnames = spec.latent_names
        pnames = spec.predictor_channels
        mnames = spec.manifest_names
        labels = [""] * P

        off, _ = entries("drift")
        for i in range(n):
            for j in range(n):
                k = off + i * n + j
                labels[k] = f"drift[{lnames[i]},{lnames[j]}]"
                if i == j:
                    free[k], code[k] = True, NEG_EXP
                elif spec.drift_form == "full":
                    free[k] = True
        off, _ = entries("cint")
        for i in range(n):
            labels[off + i] = f"cint[{lnames[i]}]"
            free[off + i] = spec.free_cint
        off, _ = entries("diffusion_chol")
        for i in range(n):
            for j in range(n):
                k = off + i * n + j
                labels[k] = f"diffusion_chol[{lnames[i]},{lnames[j]}]"
                if i == j:
                    fixed[k] = 1.0
                elif j < i and spec.diffusion_form == "full":
                    free[k] = True
        off, _ = entries("predictor_effects")
        for i in range(n):
            for j in range(p):
                labels[off + i * p + j] = f"effect[{pnames[j]}->{lnames[i]}]"
                free[off + i * p + j] = True
        off, _ = entries("loadings")
        for i in range(m):
            for j in range(n):
                labels[off + i * n + j] = f"loading[{lnames[j]}->{mnames[i]}]"
                free[off + i * n + j] = True
        off, _ = entries("manifest_intercept")
        for i in range(m):
            labels[off + i] = f"intercept[{mnames[i]}]"
            free[off + i] = True
        off, _ = entries("manifest_error_var")
        for i in range(m):
            labels[off + i] = f"error_var[{mnames[i]}]"
            free[off + i], code[off + i] = True, EXP
        off, _ = entries("init_mean")
        for i in range(n):
            labels[off + i] = f"init_mean[{lnames[i]}]"
            free[off + i] = spec.init == "free"
        off, _ = entries("init_var")
        for i in range(n):
            labels[off + i] = f"init_var[{lnames[i]}]"
            free[off + i] = spec.init == "free"
            code[off + i] = EXP

        per_group = np.zeros(P, dtype=bool)
        if spec.grouping == "free":
            per_group[:] = True
        else:
            lo, shape = blocks["loadings"]
            per_group[lo:lo + int(np.prod(shape))] = True

        index = np.full((G, P), -1, dtype=int)
        names = []
        t = 0
        for j in range(P):
            if not free[j]:
                continue
            if per_group[j] and G > 1:
                for g in range(G):
                    index[g, j] = t
                    names.append(f"{labels[j]}@{groups[g]}")
                    t += 1
            else:
                index[:, j] = t
                names.append(labels[j])
                t += 1
        return cls(spec, groups, index, code, fixed, names, blocks)

    # -- natural <-> theta ------------------------------------------------------

    def natural(self, theta, xp=np):
        """Flat natural vectors, shape ``(G, P)``."""
        theta = xp.asarray(theta)
        idx = np.where(self.index >= 0, self.index, 0)
        raw = theta[idx]
        code = self.code[None, :]
        val = xp.where(code == EXP, xp.exp(raw), xp.where(code == NEG_EXP, -xp.exp(raw), raw))
        return xp.where(self.index >= 0, val, self.fixed[None, :])

    def split(self, flat, xp=np) -> dict:
        """Split ``(G, P)`` flat naturals into named blocks with a leading group axis."""
        G = flat.shape[0]
        out = {}
        for name, (off, shape) in self.blocks.items():
            size = int(np.prod(shape))
            out[name] = flat[:, off:off + size].reshape((G,) + tuple(shape))
        return out

    def unpack(self, theta) -> dict:
        """Per-group CtParams keyed by group id."""
        blocks = self.split(self.natural(np.asarray(theta, dtype=float)))
        out = {}
        free_init = self.spec.init == "free"
        for g, gid in enumerate(self.groups):
            m = self.spec.n_manifest
            out[gid] = CtParams(
                drift=blocks["drift"][g].copy(),
                cint=blocks["cint"][g].copy(),
                diffusion_chol=blocks["diffusion_chol"][g].copy(),
                predictor_effects=blocks["predictor_effects"][g].copy(),
                loadings=blocks["loadings"][g].copy(),
                manifest_intercept=blocks["manifest_intercept"][g].copy(),
                manifest_error_var=np.diag(blocks["manifest_error_var"][g]).reshape(m, m),
                init_mean=blocks["init_mean"][g].copy() if free_init else None,
                init_cov=np.diag(blocks["init_var"][g]) if free_init else None,
            )
        return out

    def _flat_from_params(self, params: CtParams) -> np.ndarray:
        n = self.spec.n_latent
        P = self.code.shape[0]
        flat = np.zeros(P)
        values = {
            "drift": params.drift,
            "cint": params.cint,
            "diffusion_chol": params.diffusion_chol,
            "predictor_effects": params.predictor_effects,
            "loadings": params.loadings,
            "manifest_intercept": params.manifest_intercept,
            "manifest_error_var": np.diag(params.manifest_error_var),
            "init_mean": params.init_mean if params.init_mean is not None else np.zeros(n),
            "init_var": np.diag(params.init_cov) if params.init_cov is not None else np.ones(n),
        }
        for name, (off, shape) in self.blocks.items():
            size = int(np.prod(shape))
            flat[off:off + size] = np.asarray(values[name], dtype=float).reshape(-1)
        return flat

    def pack(self, params) -> np.ndarray:
        """Inverse of :meth:`unpack`. ``params`` maps group id to CtParams.

        Shared entries are read from the first group carrying them.
        """
        theta = np.full(self.n_params, np.nan)
        for g, gid in enumerate(self.groups):
            flat = self._flat_from_params(params[gid])
            for j in np.nonzero(self.index[g] >= 0)[0]:
                t = self.index[g, j]
                if not np.isnan(theta[t]):
                    continue
                v = flat[j]
                if self.code[j] == EXP:
                    v = np.log(v)
                elif self.code[j] == NEG_EXP:
                    v = np.log(-v)
                theta[t] = v
        return theta

    def jacobian_diag(self, theta) -> np.ndarray:
        """d natural / d theta for every theta entry (all transforms are elementwise)."""
        theta = np.asarray(theta, dtype=float)
        d = np.ones_like(theta)
        for g in range(len(self.groups)):
            for j in np.nonzero(self.index[g] >= 0)[0]:
                t = self.index[g, j]
                if self.code[j] == EXP:
                    d[t] = np.exp(theta[t])
                elif self.code[j] == NEG_EXP:
                    d[t] = -np.exp(theta[t])
        return d
