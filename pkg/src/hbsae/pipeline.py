"""Fit a model to a dataset and turn the draws into area estimates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregate import AreaAggregator, AreaPosterior, posterior_area_summary
from .data import LinkedDataset
from .diagnostics import DiagnosticsTable, summarize
from .direct import direct_table
from .errors import DivergenceRateExceeded
from .model import HierarchicalModel, ModelConfig, PriorConfig
from .sampler import DrawsMatrix, SamplerConfig, run_chains

RHAT_LIMIT = 1.05


@dataclass
class Fit:
    model: HierarchicalModel
    draws: DrawsMatrix
    diagnostics: DiagnosticsTable
    divergent: bool = False

    @property
    def converged(self) -> bool:
        return not self.divergent and not self.diagnostics.nonconverged(RHAT_LIMIT)


def fit_model(ds: LinkedDataset, model_config: ModelConfig, sampler_config: SamplerConfig,
              prior: PriorConfig | None = None, keep_divergent: bool = False) -> Fit:
    """Sample the posterior of one model.

    With ``keep_divergent`` a fit whose divergence rate exceeds the sampler
    limit is returned flagged as not converged instead of raising.
    """
    model = HierarchicalModel(ds, model_config, prior)
    divergent = False
    try:
        draws = run_chains(model, sampler_config, model.param_names)
    except DivergenceRateExceeded as exc:
        if not keep_divergent:
            raise
        draws, divergent = exc.draws, True
    constrained, names = model.constrained(draws.draws)
    return Fit(model, draws, summarize(constrained, names), divergent)


def posterior_from_draws(model: HierarchicalModel, Q: np.ndarray, level: float = 0.95) -> AreaPosterior:
    """Area proportions at every draw ``Q`` (unconstrained scale), summarized."""
    ds = model.dataset
    agg = AreaAggregator(ds)
    est = agg.normalized(model.theta_draws(Q))
    return posterior_area_summary(est, ds.area_ids, level, raw=est * agg.coverage)


def area_posterior(fit: Fit, level: float = 0.95) -> AreaPosterior:
    return posterior_from_draws(fit.model, fit.draws.flat(), level)


def estimate_tables(fit: Fit, level: float = 0.95):
    """Area posterior plus the direct table it is compared against."""
    return area_posterior(fit, level), direct_table(fit.model.dataset)


def theta_bounds_ok(post: AreaPosterior) -> bool:
    finite = np.isfinite(post.draws)
    return bool(((post.draws[finite] > 0) & (post.draws[finite] < 1)).all())
