"""Synthetic finite populations, informative Poisson samples and recovery checks.

The generating model mirrors the fitted one without the weight term: a unit in
area i and cell g has ``theta = expit(alpha + x_i' beta + age * xi + v_i)`` and
``y ~ Bernoulli(theta)``. Sampling is Poisson with inclusion propensity
``expit(c_i + gamma * z)`` where the latent size ``z = shift * y + Normal(0, 1)``;
``c_i`` is solved so the expected sample size of area i hits its target.
Survey weights are inverse propensities.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import yaml
from scipy.optimize import brentq

from .aggregate import AreaPosterior, partition_cells, coverage_shares, summary_row, SUMMARY_STATS
from .data import DEFAULT_SCHEMA, AreaCovariateTable, CellFrame, CellSchema, LinkedDataset, SurveyRecord, link
from .direct import DirectEstimate, direct_table
from .errors import ConfigError, EmptySample, InsufficientReplicates
from .kernels import expit
from .model import ModelConfig, preset
from .sampler import SamplerConfig

log = logging.getLogger(__name__)

# Default truth: magnitudes typical of a national survey proportion near 0.3
# with a moderate age gradient and modest between-area variation.
TRUE_ALPHA = (-2.443, -1.213, -1.035, -1.390, -1.454, -1.975, -1.137, -1.614)
TRUE_XI = (0.210, 0.119)
TRUE_SIGMA_V = 0.185
TRUE_BETA = {"comorbidity": -0.598, "pct_republican": -0.957}

# (transform tag, center, spread) of each generated area covariate;
# logit-tagged ones are drawn on the logit scale.
COVARIATE_GENERATORS = {
    "comorbidity": ("logit", -1.386, 0.20),
    "flu_shot": ("logit", -0.405, 0.25),
    "test_rate": ("identity", 1.0, 0.30),
    "positivity_rate": ("logit", -2.5, 0.40),
    "pct_republican": ("identity", 0.50, 0.10),
}


def default_sample_sizes(m: int, total: int, zero_areas: int = 1, smallest: int = 3) -> tuple[int, ...]:
    """Geometric spread of area sample sizes summing to about ``total``."""
    k = m - zero_areas
    if k <= 0:
        return (0,) * m
    if k == 1:
        sizes = np.array([float(total)])
    else:
        ratio = _solve_ratio(k, total, smallest)
        sizes = smallest * ratio ** np.arange(k)
    return (0,) * zero_areas + tuple(int(round(s)) for s in sizes)


def _solve_ratio(k: int, total: int, smallest: int) -> float:
    f = lambda r: smallest * (r**k - 1.0) / (r - 1.0) - total
    if f(1.0 + 1e-9) >= 0:
        return 1.0 + 1e-9
    # at r = total / smallest + 1 the series already exceeds total
    return brentq(f, 1.0 + 1e-9, total / smallest + 1.0)


@dataclass(frozen=True)
class SimConfig:
    m: int = 20
    count_range: tuple[int, int] = (50, 500)
    total_sample: int = 1000
    zero_areas: int = 1
    sample_sizes: tuple[int, ...] | None = None
    alpha: tuple[float, ...] = TRUE_ALPHA
    xi: tuple[float, float] = TRUE_XI
    beta: dict = field(default_factory=lambda: dict(TRUE_BETA))
    sigma_v: float = TRUE_SIGMA_V
    informativeness: float = 0.5
    latent_shift: float = 1.0
    replicates: int = 100
    seed: int = 2021
    model: str = "M3"
    weight_transform: str | None = None
    parameterization: str = "noncentered"
    chains: int = 2
    iterations: int = 1000
    warmup: int = 500

    def __post_init__(self):
        object.__setattr__(self, "count_range", tuple(self.count_range))
        object.__setattr__(self, "alpha", tuple(self.alpha))
        object.__setattr__(self, "xi", tuple(self.xi))
        if self.sample_sizes is not None:
            object.__setattr__(self, "sample_sizes", tuple(int(s) for s in self.sample_sizes))
            if len(self.sample_sizes) != self.m:
                raise ConfigError("sample_sizes needs one entry per area")
        lo, hi = self.count_range
        if not 0 <= lo <= hi:
            raise ConfigError("count_range must satisfy 0 <= low <= high")
        if self.m < 2:
            raise ConfigError("simulation needs at least 2 areas")
        unknown = set(self.beta) - set(COVARIATE_GENERATORS)
        if unknown:
            raise ConfigError(f"no generator for covariate(s) {sorted(unknown)}")

    @property
    def targets(self) -> tuple[int, ...]:
        if self.sample_sizes is not None:
            return self.sample_sizes
        return default_sample_sizes(self.m, self.total_sample, self.zero_areas)

    def model_config(self) -> ModelConfig:
        return preset(self.model, self.weight_transform, parameterization=self.parameterization)

    def sampler_config(self, seed: int) -> SamplerConfig:
        return SamplerConfig(chains=self.chains, iterations=self.iterations,
                             warmup=self.warmup, seed=seed)

    def to_mapping(self) -> dict:
        d = asdict(self)
        d["count_range"] = list(self.count_range)
        d["alpha"] = list(self.alpha)
        d["xi"] = list(self.xi)
        if self.sample_sizes is not None:
            d["sample_sizes"] = list(self.sample_sizes)
        return d

    @classmethod
    def from_mapping(cls, spec: dict | None) -> "SimConfig":
        try:
            return cls(**(spec or {}))
        except TypeError as exc:
            raise ConfigError(f"bad simulation config: {exc}") from None

    @classmethod
    def from_file(cls, path) -> "SimConfig":
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
        return cls.from_mapping(doc.get("simulation", doc))


@dataclass(frozen=True)
class Population:
    schema: CellSchema
    area_ids: np.ndarray
    counts: np.ndarray
    covariates: AreaCovariateTable
    v: np.ndarray
    unit_area: np.ndarray
    unit_cell: np.ndarray
    theta: np.ndarray
    y: np.ndarray
    latent: np.ndarray
    truth: np.ndarray

    @property
    def N(self) -> int:
        return self.y.size


def replicate_seeds(seed: int, replicate: int) -> tuple[np.random.Generator, int]:
    """Independent generator for the data and a 64-bit seed for the sampler."""
    ss = np.random.SeedSequence([seed, replicate])
    data_ss, fit_ss = ss.spawn(2)
    return (np.random.Generator(np.random.Philox(data_ss)),
            int(fit_ss.generate_state(1, np.uint64)[0]))


def gen_population(cfg: SimConfig, rng: np.random.Generator,
                   schema: CellSchema = DEFAULT_SCHEMA) -> Population:
    m, G = cfg.m, schema.n_cells
    if len(cfg.alpha) != schema.n_intercepts or len(cfg.xi) != schema.n_genders:
        raise ConfigError("truth alpha/xi lengths do not match the cell schema")
    area_ids = np.arange(1, m + 1, dtype=np.int64)
    lo, hi = cfg.count_range
    counts = rng.integers(lo, hi + 1, size=(m, G))
    counts[counts.sum(axis=1) == 0, 0] = 1

    names = tuple(COVARIATE_GENERATORS)
    raw = np.empty((m, len(names)))
    for j, name in enumerate(names):
        tag, center, spread = COVARIATE_GENERATORS[name]
        draw = center + spread * rng.standard_normal(m)
        raw[:, j] = expit(draw) if tag == "logit" else draw
    tags = tuple(COVARIATE_GENERATORS[n][0] for n in names)
    table = AreaCovariateTable(area_ids, names, tags, raw)
    transformed = table.transformed()

    v = cfg.sigma_v * rng.standard_normal(m)
    area_eta = v.copy()
    for name, coef in cfg.beta.items():
        area_eta += coef * transformed[:, names.index(name)]
    alpha = np.asarray(cfg.alpha)[schema.intercept_of_cells()]
    xi = np.asarray(cfg.xi)[schema.gender_of_cells()]
    cell_eta = area_eta[:, None] + alpha[None, :] + xi[None, :] * schema.age_of_cells()[None, :]

    flat_counts = counts.ravel()
    unit_area = np.repeat(np.repeat(np.arange(m), G), flat_counts)
    unit_cell = np.repeat(np.tile(np.arange(G), m), flat_counts)
    theta = np.repeat(expit(cell_eta).ravel(), flat_counts)
    y = (rng.random(theta.size) < theta).astype(np.int8)
    latent = cfg.latent_shift * y + rng.standard_normal(y.size)
    totals = np.bincount(unit_area, minlength=m)
    truth = np.bincount(unit_area, weights=y, minlength=m) / totals
    return Population(schema, area_ids, counts, table, v, unit_area, unit_cell, theta, y,
                      latent, truth)


def _intercept(z: np.ndarray, gamma: float, target: float) -> float:
    if target >= z.size:
        return 50.0
    f = lambda c: float(expit(c + gamma * z).sum()) - target
    lo, hi = -60.0, 60.0
    return brentq(f, lo, hi, xtol=1e-12)


def draw_sample(pop: Population, cfg: SimConfig, rng: np.random.Generator) -> LinkedDataset:
    """Poisson sample with latent-size propensities; weights are 1 / propensity."""
    targets = cfg.targets
    selected = []
    weights = []
    bounds = np.searchsorted(pop.unit_area, np.arange(cfg.m + 1))
    for i in range(cfg.m):
        lo, hi = bounds[i], bounds[i + 1]
        u = rng.random(hi - lo)
        if targets[i] <= 0:
            continue
        z = pop.latent[lo:hi]
        c = _intercept(z, cfg.informativeness, targets[i])
        pi = np.clip(expit(c + cfg.informativeness * z), 1e-300, 1.0)
        take = np.flatnonzero(u < pi)
        selected.append(lo + take)
        weights.append(1.0 / pi[take])
    idx = np.concatenate(selected) if selected else np.empty(0, np.int64)
    w = np.concatenate(weights) if weights else np.empty(0)
    if idx.size == 0:
        raise EmptySample("the simulated design selected no units")
    schema = pop.schema
    records = [SurveyRecord(int(pop.area_ids[pop.unit_area[k]]), schema.decode(int(pop.unit_cell[k])),
                            int(pop.y[k]), float(wk)) for k, wk in zip(idx, w)]
    cells = CellFrame(pop.area_ids, pop.counts, schema)
    return link(records, cells, pop.covariates)


# ---------------------------------------------------------------------------
# recovery
# ---------------------------------------------------------------------------


@dataclass
class ReplicateResult:
    replicate: int
    area_ids: np.ndarray
    n_i: np.ndarray
    truth: np.ndarray
    hb_mean: np.ndarray
    hb_sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    direct: np.ndarray
    direct_se: np.ndarray
    residual: np.ndarray
    converged: bool = True
    max_rhat: float = float("nan")
    divergence_rate: float = 0.0

    @classmethod
    def from_posterior(cls, replicate: int, post: AreaPosterior, direct: list[DirectEstimate],
                       truth: np.ndarray, residual: np.ndarray, **extra) -> "ReplicateResult":
        est = np.array([np.nan if d.no_sample else d.estimate for d in direct])
        se = np.array([np.nan if d.no_sample else d.se for d in direct])
        n = np.array([d.n_i for d in direct])
        return cls(replicate, post.area_ids, n, np.asarray(truth), post.mean, post.sd,
                   post.lower, post.upper, est, se, np.asarray(residual), **extra)


N_BINS = ((1, 10), (11, 30), (31, 100), (101, None))


def _bin_label(lo: int, hi: int | None) -> str:
    return f"{lo}-{hi}" if hi is not None else f">{lo - 1}"


@dataclass
class RecoveryReport:
    replicates: list[ReplicateResult]
    pooled: dict[str, float]
    by_area: list[dict]
    se_ratio_bins: list[dict]
    summaries: dict[str, dict[str, float]]

    def pooled_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in self.pooled.items():
            w.writerow([k, f"{v:.6g}"])
        return buf.getvalue()

    def replicates_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replicate", "converged", "max_rhat", "divergence_rate", "coverage",
                    "mean_bias", "mean_abs_bias"])
        for r in self.replicates:
            inside = (r.truth >= r.lower) & (r.truth <= r.upper)
            bias = r.hb_mean - r.truth
            w.writerow([r.replicate, str(r.converged).lower(), f"{r.max_rhat:.4f}",
                        f"{r.divergence_rate:.4f}", f"{inside.mean():.4f}",
                        f"{bias.mean():.5f}", f"{np.abs(bias).mean():.5f}"])
        return buf.getvalue()

    def by_area_csv(self) -> str:
        return _dict_rows_csv(self.by_area)

    def se_ratio_csv(self) -> str:
        return _dict_rows_csv(self.se_ratio_bins)

    def summaries_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["quantity"] + list(SUMMARY_STATS))
        for name, row in self.summaries.items():
            w.writerow([name] + [f"{row[k]:.4f}" for k in SUMMARY_STATS])
        return buf.getvalue()


def _dict_rows_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(rows[0]))
    for r in rows:
        w.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in r.values()])
    return buf.getvalue()


def evaluate_recovery(results: list[ReplicateResult], min_replicates: int = 30) -> RecoveryReport:
    """Bias, interval coverage and direct/HB standard-error ratios over replicates.

    Only converged replicates enter the pooled numbers.
    """
    used = [r for r in results if r.converged]
    if len(used) < min_replicates:
        raise InsufficientReplicates(
            f"{len(used)} converged replicate(s); at least {min_replicates} required")
    truth = np.stack([r.truth for r in used])
    mean = np.stack([r.hb_mean for r in used])
    lower = np.stack([r.lower for r in used])
    upper = np.stack([r.upper for r in used])
    sd = np.stack([r.hb_sd for r in used])
    direct = np.stack([r.direct for r in used])
    dse = np.stack([r.direct_se for r in used])
    n = np.stack([r.n_i for r in used])
    inside = (truth >= lower) & (truth <= upper)
    bias = mean - truth
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where((n > 0) & (sd > 0), dse / sd, np.nan)
    dbias = direct - truth

    pooled = {
        "replicates": float(len(results)),
        "converged_replicates": float(len(used)),
        "coverage": float(inside.mean()),
        "mean_bias": float(bias.mean()),
        "mean_abs_bias": float(np.abs(bias).mean()),
        "rmse_hb": float(np.sqrt(np.mean(bias**2))),
        "rmse_direct": float(np.sqrt(np.nanmean(dbias**2))),
        "median_se_ratio_n_le_10": float(np.nanmedian(ratio[(n >= 1) & (n <= 10)]))
        if ((n >= 1) & (n <= 10)).any() else float("nan"),
        "max_residual_share": float(np.max([r.residual.max() for r in used])),
    }

    by_area = []
    for j, a in enumerate(used[0].area_ids):
        by_area.append({
            "area_id": int(a),
            "mean_n": float(n[:, j].mean()),
            "bias": float(bias[:, j].mean()),
            "coverage": float(inside[:, j].mean()),
            "mean_hb_sd": float(sd[:, j].mean()),
            "mean_direct_se": float(np.nanmean(dse[:, j])) if np.isfinite(dse[:, j]).any() else float("nan"),
        })

    bins = []
    for lo, hi in N_BINS:
        sel = (n >= lo) & ((n <= hi) if hi is not None else True)
        vals = ratio[sel]
        vals = vals[np.isfinite(vals)]
        bins.append({
            "n_bin": _bin_label(lo, hi),
            "area_replicates": int(sel.sum()),
            "median_se_ratio": float(np.median(vals)) if vals.size else float("nan"),
            "mean_se_ratio": float(np.mean(vals)) if vals.size else float("nan"),
        })

    summaries = {
        "direct estimate": summary_row(direct),
        "HB estimate": summary_row(mean),
        "direct se": summary_row(dse),
        "HB sd": summary_row(sd),
    }
    return RecoveryReport(results, pooled, by_area, bins, summaries)


def simulated_dataset(cfg: SimConfig, replicate: int = 0,
                      schema: CellSchema = DEFAULT_SCHEMA) -> tuple[LinkedDataset, Population]:
    """Population and sample of one replicate, without fitting."""
    rng, _ = replicate_seeds(cfg.seed, replicate)
    pop = gen_population(cfg, rng, schema)
    return draw_sample(pop, cfg, rng), pop


def run_replicate(cfg: SimConfig, replicate: int, schema: CellSchema = DEFAULT_SCHEMA,
                  keep_dataset: bool = False):
    """Generate, sample, fit and summarize one replicate."""
    from .pipeline import area_posterior, fit_model

    rng, fit_seed = replicate_seeds(cfg.seed, replicate)
    pop = gen_population(cfg, rng, schema)
    ds = draw_sample(pop, cfg, rng)
    # a divergent replicate is recorded as not converged rather than ending the study
    fit = fit_model(ds, cfg.model_config(), cfg.sampler_config(fit_seed), keep_divergent=True)
    post = area_posterior(fit)
    shares = coverage_shares(ds.counts, partition_cells(ds), ds.area_ids, warn_above=np.inf)
    result = ReplicateResult.from_posterior(
        replicate, post, direct_table(ds), pop.truth, shares.residual,
        converged=fit.converged, max_rhat=fit.diagnostics.max_rhat(),
        divergence_rate=fit.draws.divergence_rate())
    return (result, ds, pop) if keep_dataset else result
