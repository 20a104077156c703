"""Hierarchical Bayes small-area estimation of finite-population proportions."""

__version__ = "0.1.0"

from .data import CellKey, CellSchema, LinkedDataset, SurveyRecord, load_dataset, load_dir
from .direct import DirectEstimate, direct_estimate, direct_table
from .model import HierarchicalModel, ModelConfig, PriorConfig, preset
from .pipeline import Fit, area_posterior, fit_model
from .sampler import DrawsMatrix, SamplerConfig, run_chains

__all__ = [
    "CellKey", "CellSchema", "DirectEstimate", "DrawsMatrix", "Fit", "HierarchicalModel",
    "LinkedDataset", "ModelConfig", "PriorConfig", "SamplerConfig", "SurveyRecord",
    "area_posterior", "direct_estimate", "direct_table", "fit_model", "load_dataset", "load_dir",
    "preset", "run_chains",
]
