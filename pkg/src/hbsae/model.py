"""Three-level Bernoulli-logit model for sampled respondents.

Linear predictor of record k in area i, cell g::

    eta = alpha[race x ethnicity of g] + x_i' beta + age * xi[gender of g]
          + v_i + lambda * h(w_k)

with ``v_i ~ Normal(0, sigma_v**2)``. The unconstrained parameter vector is laid
out as ``[alpha, beta, xi, lambda?, v, log_sigma_v]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import NamedTuple

import numpy as np

from . import kernels
from .data import LinkedDataset
from .errors import ConfigError, DegenerateCovariate, DimensionMismatch, NonFiniteValue, NonpositiveWeight

COVARIATES = ("comorbidity", "flu_shot", "test_rate", "positivity_rate", "pct_republican")

_TRANSFORM_ALIASES = {
    "identity": "identity", "id": "identity", "w": "identity",
    "log": "log", "ln": "log",
    "inverse": "inverse", "inv": "inverse",
    "none": "none", "off": "none",
}

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def canonical_transform(kind: str) -> str:
    try:
        return _TRANSFORM_ALIASES[str(kind).strip().lower()]
    except KeyError:
        raise ConfigError(f"unknown weight transform {kind!r}; use id|log|inv|none") from None


def weight_transform(w, kind: str):
    """h(w) for the survey-weight term."""
    kind = canonical_transform(kind)
    arr = np.asarray(w, dtype=np.float64)
    if (arr <= 0).any() or not np.isfinite(arr).all():
        raise NonpositiveWeight("survey weights must be positive and finite")
    if kind == "identity":
        out = arr
    elif kind == "log":
        out = np.log(arr)
    elif kind == "inverse":
        out = 1.0 / arr
    else:
        raise ConfigError("weight transform 'none' has no h(w)")
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ModelConfig:
    """Which area covariates and weight term enter the linear predictor.

    The race x ethnicity intercepts and the gender-specific age slopes are
    always present. ``parameterization`` selects how the area effects are
    sampled: ``centered`` uses v directly, ``noncentered`` uses v = sigma_v * z.
    """

    covariates: tuple[str, ...] = ("comorbidity", "pct_republican")
    weight_transform: str = "identity"
    standardize: bool = True
    parameterization: str = "centered"
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "weight_transform", canonical_transform(self.weight_transform))
        if self.parameterization not in ("centered", "noncentered"):
            raise ConfigError(f"unknown parameterization {self.parameterization!r}")
        if len(set(self.covariates)) != len(self.covariates):
            raise ConfigError("duplicate covariate in model config")

    @property
    def has_weight_term(self) -> bool:
        return self.weight_transform != "none"

    @property
    def name(self) -> str:
        return self.label or "custom"

    def to_mapping(self) -> dict:
        return {
            "covariates": list(self.covariates),
            "weight_transform": self.weight_transform,
            "standardize": self.standardize,
            "parameterization": self.parameterization,
            "label": self.label,
        }

    @classmethod
    def from_mapping(cls, spec: dict) -> "ModelConfig":
        spec = dict(spec)
        try:
            if "preset" in spec:
                base = preset(spec.pop("preset"), spec.pop("weight_transform", None))
            else:
                base = cls()
            return replace(base, **spec)
        except TypeError as exc:
            raise ConfigError(f"bad model config: {exc}") from None


_PRESETS = {
    "M1": (COVARIATES, "identity"),
    "M2": (("comorbidity", "test_rate", "pct_republican"), "identity"),
    "M3": (("comorbidity", "pct_republican"), "identity"),
    "M4": (("comorbidity", "pct_republican"), "none"),
}

_LABEL = {"identity": "w", "log": "ln w", "inverse": "1/w", "none": "no w"}


def preset(name: str, weight_transform: str | None = None, **overrides) -> ModelConfig:
    """Models M1..M4 of the competing-model list; optionally swap h(w)."""
    key = name.upper()
    if key not in _PRESETS:
        raise ConfigError(f"unknown model preset {name!r}; choose from {sorted(_PRESETS)}")
    covs, wt = _PRESETS[key]
    label = key
    if weight_transform is not None:
        new = canonical_transform(weight_transform)
        if new != wt:
            label = f"{key}({_LABEL[new]})"
        wt = new
    cfg = {"covariates": covs, "weight_transform": wt, "label": label}
    cfg.update(overrides)
    return ModelConfig(**cfg)


@dataclass(frozen=True)
class PriorConfig:
    """Normal(0, coef_sd**2) on fixed coefficients, HalfNormal(sigma_v_scale) on sigma_v."""

    coef_sd: float = 5.0
    sigma_v_scale: float = 1.0


# ---------------------------------------------------------------------------
# design
# ---------------------------------------------------------------------------


class DesignRow(NamedTuple):
    cell_intercept_index: int
    area_index: int
    area_covariates: np.ndarray
    age_value: float
    gender_index: int
    hw: float | None


@dataclass(frozen=True)
class Design:
    """Column-wise design for all records plus the standardization constants."""

    intercept_idx: np.ndarray
    area_idx: np.ndarray
    gender_idx: np.ndarray
    age: np.ndarray
    hw: np.ndarray
    y: np.ndarray
    weight: np.ndarray
    X_area: np.ndarray
    has_weight_term: bool
    n_intercepts: int
    n_genders: int
    covariate_names: tuple[str, ...]
    standardization: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def m(self) -> int:
        return self.X_area.shape[0]

    @property
    def q(self) -> int:
        return self.X_area.shape[1]

    def row(self, k: int) -> DesignRow:
        return DesignRow(int(self.intercept_idx[k]), int(self.area_idx[k]),
                         self.X_area[self.area_idx[k]], float(self.age[k]),
                         int(self.gender_idx[k]),
                         float(self.hw[k]) if self.has_weight_term else None)


def _scale(values: np.ndarray, name: str) -> tuple[float, float]:
    if values.size == 0:
        raise DegenerateCovariate(f"cannot standardize {name}: no records")
    center = float(values.mean())
    sd = float(values.std())
    if not sd > 1e-12 * max(1.0, abs(center)):
        raise DegenerateCovariate(f"{name} has zero variance and cannot be standardized")
    return center, sd


def build_design(ds: LinkedDataset, config: ModelConfig) -> Design:
    """Assemble design columns; with ``standardize`` continuous covariates are
    centered and scaled by their mean and sd over the sampled records."""
    schema = ds.schema
    missing = [c for c in config.covariates if c not in ds.covariate_names]
    if missing:
        raise ConfigError(f"model uses covariate(s) {missing} absent from the covariate table")
    intercept = schema.intercept_of_cells()[ds.cell]
    gender = schema.gender_of_cells()[ds.cell]
    age = schema.age_of_cells()[ds.cell].astype(np.float64)
    X = np.column_stack([ds.covariate(c) for c in config.covariates]) if config.covariates \
        else np.zeros((ds.m, 0))
    hw = weight_transform(ds.weight, config.weight_transform) if config.has_weight_term and ds.n \
        else np.zeros(ds.n)
    hw = np.asarray(hw, dtype=np.float64)

    report = {}
    # nothing to standardize against when there are no records
    if config.standardize and ds.n:
        for j, name in enumerate(config.covariates):
            c, s = _scale(X[ds.area, j], name)
            X[:, j] = (X[:, j] - c) / s
            report[name] = (c, s)
        c, s = _scale(age, "age")
        age = (age - c) / s
        report["age"] = (c, s)
        if config.has_weight_term:
            c, s = _scale(hw, "h(w)")
            hw = (hw - c) / s
            report["h(w)"] = (c, s)
    # areas without covariates have no records, so their rows never reach eta
    X = np.where(np.isnan(X), 0.0, X)
    return Design(
        intercept_idx=np.ascontiguousarray(intercept, dtype=np.int64),
        area_idx=np.ascontiguousarray(ds.area, dtype=np.int64),
        gender_idx=np.ascontiguousarray(gender, dtype=np.int64),
        age=np.ascontiguousarray(age),
        hw=np.ascontiguousarray(hw),
        y=np.ascontiguousarray(ds.y, dtype=np.float64),
        weight=np.ascontiguousarray(ds.weight),
        X_area=np.ascontiguousarray(X),
        has_weight_term=config.has_weight_term,
        n_intercepts=schema.n_intercepts,
        n_genders=schema.n_genders,
        covariate_names=config.covariates,
        standardization=report,
    )


# ---------------------------------------------------------------------------
# parameter layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamLayout:
    n_alpha: int
    n_beta: int
    n_xi: int
    has_lambda: bool
    m: int

    @cached_property
    def alpha(self) -> slice:
        return slice(0, self.n_alpha)

    @cached_property
    def beta(self) -> slice:
        return slice(self.alpha.stop, self.alpha.stop + self.n_beta)

    @cached_property
    def xi(self) -> slice:
        return slice(self.beta.stop, self.beta.stop + self.n_xi)

    @cached_property
    def lam(self) -> int | None:
        return self.xi.stop if self.has_lambda else None

    @cached_property
    def v(self) -> slice:
        start = self.xi.stop + int(self.has_lambda)
        return slice(start, start + self.m)

    @cached_property
    def log_sigma(self) -> int:
        return self.v.stop

    @cached_property
    def dim(self) -> int:
        return self.log_sigma + 1


class ParamVector(NamedTuple):
    alpha: np.ndarray
    beta: np.ndarray
    xi: np.ndarray
    lam: float
    v: np.ndarray
    log_sigma_v: float

    @property
    def sigma_v(self) -> float:
        return math.exp(self.log_sigma_v)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


class HierarchicalModel:
    """Log-posterior and gradient evaluator for one dataset and model config."""

    def __init__(self, ds: LinkedDataset, config: ModelConfig | None = None,
                 prior: PriorConfig | None = None, design: Design | None = None):
        self.dataset = ds
        self.config = config or ModelConfig()
        self.prior = prior or PriorConfig()
        self.design = design or build_design(ds, self.config)
        d = self.design
        self.layout = ParamLayout(d.n_intercepts, d.q, d.n_genders, d.has_weight_term, ds.m)
        self.noncentered = self.config.parameterization == "noncentered"

    @cached_property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def param_names(self) -> list[str]:
        schema = self.dataset.schema
        names = [f"alpha[{schema.intercept_label(s)}]" for s in range(self.layout.n_alpha)]
        names += [f"beta[{c}]" for c in self.design.covariate_names]
        names += [f"xi[{g}]" for g in schema.genders]
        if self.layout.has_lambda:
            names.append("lambda")
        vname = "z" if self.noncentered else "v"
        names += [f"{vname}[{a}]" for a in self.dataset.area_ids.tolist()]
        names.append("log_sigma_v")
        return names

    def _check(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64)
        if q.shape[-1] != self.dim:
            raise DimensionMismatch(f"parameter vector has length {q.shape[-1]}, model needs {self.dim}")
        return q

    def unpack(self, q) -> ParamVector:
        """Split a parameter vector; ``v`` is always the area effect itself."""
        q = self._check(q)
        L = self.layout
        log_sigma = float(q[L.log_sigma])
        v = q[L.v]
        if self.noncentered:
            v = math.exp(log_sigma) * v
        lam = float(q[L.lam]) if L.has_lambda else 0.0
        return ParamVector(q[L.alpha], q[L.beta], q[L.xi], lam, v, log_sigma)

    def pack(self, params: ParamVector) -> np.ndarray:
        L = self.layout
        q = np.zeros(self.dim)
        q[L.alpha] = params.alpha
        q[L.beta] = params.beta
        q[L.xi] = params.xi
        if L.has_lambda:
            q[L.lam] = params.lam
        q[L.log_sigma] = params.log_sigma_v
        v = np.asarray(params.v, dtype=np.float64)
        q[L.v] = v / math.exp(params.log_sigma_v) if self.noncentered else v
        return q

    # -- pieces ------------------------------------------------------------

    def area_eta(self, p: ParamVector) -> np.ndarray:
        return self.design.X_area @ p.beta + p.v

    def linear_predictor(self, q) -> np.ndarray:
        p = self.unpack(q)
        d = self.design
        return (p.alpha[d.intercept_idx] + self.area_eta(p)[d.area_idx]
                + d.age * p.xi[d.gender_idx] + p.lam * d.hw)

    def log_prior(self, q) -> float:
        return self.log_prior_grad(q)[0]

    def log_prior_grad(self, q) -> tuple[float, np.ndarray]:
        q = self._check(q)
        L = self.layout
        var = self.prior.coef_sd ** 2
        scale = self.prior.sigma_v_scale
        # fixed coefficients occupy one leading block
        nf = L.v.start
        fixed = q[:nf]
        grad = np.empty(self.dim)
        grad[:nf] = fixed / -var
        lp = -0.5 * float(np.dot(fixed, fixed)) / var - nf * (math.log(self.prior.coef_sd) + _LOG_SQRT_2PI)

        s = float(q[L.log_sigma])
        sigma = math.exp(s)
        u = q[L.v]
        uu = float(np.dot(u, u))
        if self.noncentered:
            lp += -0.5 * uu - L.m * _LOG_SQRT_2PI
            grad[L.v] = -u
            grad[L.log_sigma] = 0.0
        else:
            lp += -0.5 * uu / sigma**2 - L.m * (s + _LOG_SQRT_2PI)
            grad[L.v] = u / -sigma**2
            grad[L.log_sigma] = uu / sigma**2 - L.m
        # HalfNormal(scale) on sigma plus log|d sigma / d s| = s
        lp += math.log(2.0) - _LOG_SQRT_2PI - math.log(scale) - 0.5 * (sigma / scale) ** 2 + s
        grad[L.log_sigma] += 1.0 - (sigma / scale) ** 2
        return lp, grad

    def log_likelihood(self, q) -> float:
        return float(np.sum(self.pointwise_log_likelihood(q)))

    def pointwise_log_likelihood(self, q) -> np.ndarray:
        return kernels.bernoulli_logpmf(self.linear_predictor(q), self.design.y)

    def loglik_grad(self, q) -> tuple[float, np.ndarray]:
        p = self.unpack(q)
        d = self.design
        L = self.layout
        ll, g_alpha, g_area, g_xi, g_lam = kernels.loglik_grad(
            d.intercept_idx, d.area_idx, d.gender_idx, d.age, d.hw, d.y,
            np.ascontiguousarray(p.alpha), self.area_eta(p), np.ascontiguousarray(p.xi), p.lam)
        grad = np.zeros(self.dim)
        grad[L.alpha] = g_alpha
        grad[L.beta] = d.X_area.T @ g_area
        grad[L.xi] = g_xi
        if L.has_lambda:
            grad[L.lam] = g_lam
        if self.noncentered:
            grad[L.v] = math.exp(p.log_sigma_v) * g_area
            grad[L.log_sigma] = float(np.dot(g_area, p.v))
        else:
            grad[L.v] = g_area
        return float(ll), grad

    def logp_grad(self, q) -> tuple[float, np.ndarray]:
        """Log-posterior (up to the evidence) and its gradient."""
        q = self._check(q)
        ll, g = self.loglik_grad(q)
        lp, gp = self.log_prior_grad(q)
        value = ll + lp
        grad = g + gp
        if not (math.isfinite(value) and np.isfinite(grad).all()):
            raise NonFiniteValue("log-posterior or gradient is not finite")
        return value, grad

    # -- many draws ---------------------------------------------------------

    def _draw_blocks(self, Q: np.ndarray):
        Q = np.atleast_2d(self._check(Q))
        L = self.layout
        sigma = np.exp(Q[:, L.log_sigma])
        v = Q[:, L.v] * sigma[:, None] if self.noncentered else Q[:, L.v]
        area_eta = Q[:, L.beta] @ self.design.X_area.T + v
        lam = Q[:, L.lam] if L.has_lambda else np.zeros(len(Q))
        return (np.ascontiguousarray(Q[:, L.alpha]), np.ascontiguousarray(area_eta),
                np.ascontiguousarray(Q[:, L.xi]), np.ascontiguousarray(lam))

    def eta_draws(self, Q) -> np.ndarray:
        """Linear predictor for every record at every draw, shape (R, n)."""
        d = self.design
        return kernels.eta_draws(d.intercept_idx, d.area_idx, d.gender_idx, d.age, d.hw,
                                 *self._draw_blocks(Q))

    def theta_draws(self, Q) -> np.ndarray:
        return kernels.expit(self.eta_draws(Q))

    def loglik_draws(self, Q) -> np.ndarray:
        d = self.design
        return kernels.loglik_draws(d.intercept_idx, d.area_idx, d.gender_idx, d.age, d.hw,
                                    d.y, *self._draw_blocks(Q))

    def constrained(self, Q) -> tuple[np.ndarray, list[str]]:
        """Draws on the reporting scale: v instead of z and sigma_v instead of its log."""
        Q = np.array(Q, dtype=np.float64, copy=True)
        L = self.layout
        names = self.param_names
        sigma = np.exp(Q[..., L.log_sigma])
        if self.noncentered:
            Q[..., L.v] = Q[..., L.v] * sigma[..., None]
            names[L.v] = [f"v[{a}]" for a in self.dataset.area_ids.tolist()]
        Q[..., L.log_sigma] = sigma
        names[L.log_sigma] = "sigma_v"
        return Q, names


# ---------------------------------------------------------------------------
# free-function surface
# ---------------------------------------------------------------------------


def inv_link(eta):
    """Inverse logit."""
    return kernels.expit(eta)


def linear_predictor(params: ParamVector, row: DesignRow) -> float:
    """eta for a single design row."""
    beta = np.asarray(params.beta, dtype=np.float64)
    if beta.shape != row.area_covariates.shape:
        raise DimensionMismatch(f"beta has {beta.size} entries, row has {row.area_covariates.size} covariates")
    if not 0 <= row.cell_intercept_index < len(params.alpha):
        raise DimensionMismatch("intercept index outside alpha")
    if not 0 <= row.gender_index < len(params.xi):
        raise DimensionMismatch("gender index outside xi")
    if not 0 <= row.area_index < len(params.v):
        raise DimensionMismatch("area index outside v")
    eta = (params.alpha[row.cell_intercept_index] + float(row.area_covariates @ beta)
           + row.age_value * params.xi[row.gender_index] + params.v[row.area_index])
    if row.hw is not None:
        eta += params.lam * row.hw
    return float(eta)


def log_prior(model: HierarchicalModel, q) -> float:
    return model.log_prior(q)


def log_likelihood(model: HierarchicalModel, q, pointwise: bool = False):
    return model.pointwise_log_likelihood(q) if pointwise else model.log_likelihood(q)


def log_posterior_grad(model: HierarchicalModel, q) -> tuple[float, np.ndarray]:
    return model.logp_grad(q)
