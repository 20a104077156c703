"""Run configuration: a YAML key-value tree whose every leaf has a CLI flag.

Example::

    data:
      dir: fixtures/demo          # or survey / census / covariates paths
    model:
      preset: M3
      weight_transform: identity
    sampler:
      chains: 4
      iterations: 4000
      warmup: 2000
      seed: 20201014
    output: runs/m3
    level: 0.95
    cell_schema:                # optional; these are the defaults
      race: [White, Black, Asian, Other]
      ethnicity: [NonHispanic, Hispanic]
      gender: [Male, Female]
      age_bands: 7
    allow_nonconverged: false
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import DEFAULT_SCHEMA, CellSchema
from .errors import ConfigError
from .model import ModelConfig
from .sampler import SamplerConfig

TOP_KEYS = {"data", "model", "sampler", "output", "level", "allow_nonconverged", "simulation", "seed",
            "cell_schema"}
DATA_KEYS = {"dir", "survey", "census", "covariates"}


def load_tree(path: str | os.PathLike | None) -> dict:
    """Read a config file; missing path means an empty tree."""
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(doc) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    return doc


def set_path(tree: dict, dotted: str, value) -> None:
    """Assign ``tree['a']['b'] = value`` for ``dotted='a.b'``; None is ignored."""
    if value is None:
        return
    node = tree
    *parents, leaf = dotted.split(".")
    for key in parents:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            raise ConfigError(f"config key {key!r} must be a mapping")
        node = child
    node[leaf] = value


@dataclass
class RunConfig:
    data: dict = field(default_factory=dict)
    model: ModelConfig = field(default_factory=ModelConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    output: str | None = None
    level: float = 0.95
    allow_nonconverged: bool = False
    schema: CellSchema = DEFAULT_SCHEMA

    @classmethod
    def from_tree(cls, tree: dict) -> "RunConfig":
        tree = copy.deepcopy(tree)
        data = tree.get("data") or {}
        if not isinstance(data, dict) or set(data) - DATA_KEYS:
            raise ConfigError(f"data accepts only {sorted(DATA_KEYS)}")
        model_spec = tree.get("model") or {}
        if isinstance(model_spec, str):
            model_spec = {"preset": model_spec}
        model = ModelConfig.from_mapping(model_spec)
        sampler_spec = dict(tree.get("sampler") or {})
        if "seed" in tree:
            sampler_spec.setdefault("seed", tree["seed"])
        try:
            sampler = SamplerConfig(**sampler_spec)
        except TypeError as exc:
            raise ConfigError(f"bad sampler config: {exc}") from None
        level = float(tree.get("level", 0.95))
        if not 0.0 < level < 1.0:
            raise ConfigError("level must lie in (0, 1)")
        return cls(data, model, sampler, tree.get("output"), level,
                   bool(tree.get("allow_nonconverged", False)),
                   CellSchema.from_mapping(tree.get("cell_schema")))

    def to_tree(self) -> dict:
        tree = {
            "data": dict(sorted(self.data.items())),
            "model": self.model.to_mapping(),
            "sampler": self.sampler.to_mapping(),
            "level": self.level,
            "allow_nonconverged": self.allow_nonconverged,
            "cell_schema": self.schema.to_mapping(),
        }
        if self.output is not None:
            tree["output"] = str(self.output)
        return tree

    def dump(self) -> str:
        return yaml.safe_dump(self.to_tree(), sort_keys=True)

    def data_paths(self) -> tuple[Path, Path, Path | None]:
        d = self.data
        if "dir" in d:
            base = Path(d["dir"])
            cov = base / "area_covariates.csv"
            return base / "survey.csv", base / "census.csv", cov if cov.exists() else None
        if "survey" not in d or "census" not in d:
            raise ConfigError("data needs either dir or both survey and census paths")
        cov = d.get("covariates")
        return Path(d["survey"]), Path(d["census"]), Path(cov) if cov else None
