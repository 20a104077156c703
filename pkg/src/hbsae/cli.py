"""Command-line entry point: ``hbsae {direct,fit,estimate,compare,simulate,validate}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 convergence
failure, 5 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .aggregate import area_estimates_csv, coverage_shares, partition_cells, se_ratios_csv
from .config import RunConfig, load_tree, set_path
from .data import CellSchema, dataset_checksum, load_dataset, load_dir, validate, write_dataset
from .direct import direct_table
from .errors import ConfigError, ConvergenceError, DatasetError, HBSAEError
from .loo import compare_csv, elpd_csv, elpd_loo, pareto_k_csv, pointwise_loglik
from .model import HierarchicalModel, ModelConfig
from .pipeline import RHAT_LIMIT, fit_model, posterior_from_draws
from .sampler import DrawsMatrix
from .sim import SimConfig, evaluate_recovery, run_replicate

log = logging.getLogger("hbsae")

FIT_FILES = ("draws.csv", "diagnostics.csv", "loglik.npy", "config.yaml", "fit.json")


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_npy(path: Path, arr: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.save(fh, arr, allow_pickle=False)
    os.replace(tmp, path)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _direct_csv(rows) -> str:
    lines = ["area_id,estimate,se,n"]
    for d in rows:
        est = "NA" if d.no_sample else f"{d.estimate:.6g}"
        se = "NA" if d.no_sample else f"{d.se:.6g}"
        lines.append(f"{d.area_id},{est},{se},{d.n_i}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# config assembly
# ---------------------------------------------------------------------------


def _run_config(args) -> RunConfig:
    tree = load_tree(getattr(args, "config", None))
    for dotted, attr in (("data.dir", "data"), ("data.survey", "survey"), ("data.census", "census"),
                         ("data.covariates", "covariates"), ("output", "out"),
                         ("level", "level"), ("sampler.chains", "chains"),
                         ("sampler.iterations", "iterations"), ("sampler.warmup", "warmup"),
                         ("sampler.seed", "seed"), ("sampler.target_accept", "target_accept"),
                         ("sampler.algorithm", "algorithm")):
        set_path(tree, dotted, getattr(args, attr, None))
    if getattr(args, "allow_nonconverged", False):
        tree["allow_nonconverged"] = True
    model = tree.get("model") or {}
    if isinstance(model, str):
        model = {"preset": model}
    for key, attr in (("preset", "model"), ("weight_transform", "weight_transform"),
                      ("parameterization", "parameterization")):
        if getattr(args, attr, None) is not None:
            model[key] = getattr(args, attr)
    if model:
        tree["model"] = model
    return RunConfig.from_tree(tree)


def _load(cfg: RunConfig):
    survey, census, cov = cfg.data_paths()
    for p in (survey, census):
        if not p.exists():
            raise DatasetError(f"input file {p} does not exist")
    return load_dataset(survey, census, cov, schema=cfg.schema)


def _out_dir(cfg: RunConfig) -> Path:
    if cfg.output is None:
        raise ConfigError("no output directory given (use --out or output: in the config)")
    return Path(cfg.output)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    cfg = _run_config(args)
    ds = _load(cfg)
    problems = validate(ds)
    part = partition_cells(ds)
    shares = coverage_shares(ds.counts, part, ds.area_ids)
    print(f"areas={ds.m} records={ds.n} sampled_areas={int((ds.n_i > 0).sum())} "
          f"max_residual_share={shares.residual.max():.4f}")
    print(f"checksum={dataset_checksum(ds)}")
    for p in problems:
        print(f"problem: {p}")
    if problems:
        raise DatasetError(f"{len(problems)} dataset invariant(s) violated")
    print("dataset valid")
    return 0


def cmd_direct(args) -> int:
    cfg = _run_config(args)
    ds = _load(cfg)
    out = _out_dir(cfg)
    _write_text(out / "direct_estimates.csv", _direct_csv(direct_table(ds)))
    _write_text(out / "config.yaml", cfg.dump())
    return 0


def cmd_fit(args) -> int:
    cfg = _run_config(args)
    ds = _load(cfg)
    out = _out_dir(cfg)
    fit = fit_model(ds, cfg.model, cfg.sampler)
    ll = pointwise_loglik(fit.model, fit.draws)
    _, names = fit.model.constrained(fit.draws.draws[:1, :1])

    write_dataset(ds, out / "dataset")
    _write_text(out / "draws.csv", fit.draws.to_csv())
    _write_text(out / "diagnostics.csv", fit.diagnostics.to_csv())
    _write_npy(out / "loglik.npy", ll)
    _write_text(out / "config.yaml", cfg.dump())
    bad = fit.diagnostics.nonconverged(RHAT_LIMIT)
    meta = {
        "dataset_checksum": dataset_checksum(ds),
        "model": cfg.model.name,
        "model_config": cfg.model.to_mapping(),
        "draws": int(fit.draws.R),
        "chains": int(fit.draws.chains),
        "parameters": len(names),
        "max_rhat": round(float(fit.diagnostics.max_rhat()), 6),
        "divergence_rate": round(fit.draws.divergence_rate(), 6),
        "converged": not bad,
        "nonconverged": bad,
        "version": __version__,
        "cell_schema": cfg.schema.to_mapping(),
    }
    _write_text(out / "fit.json", _json(meta))
    print(f"{cfg.model.name}: {fit.draws.R} draws, max Rhat {meta['max_rhat']:.4f}, "
          f"divergences {100 * meta['divergence_rate']:.2f}%")
    if bad and not cfg.allow_nonconverged:
        raise ConvergenceError(f"Rhat >= {RHAT_LIMIT} for {len(bad)} parameter(s): "
                               f"{', '.join(bad[:5])}{' ...' if len(bad) > 5 else ''}")
    return 0


class FitArtifact:
    """A fit directory read back from disk."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        missing = [f for f in FIT_FILES if not (self.path / f).exists()]
        if missing:
            raise DatasetError(f"{self.path} is not a fit directory (missing {', '.join(missing)})")
        self.meta = json.loads((self.path / "fit.json").read_text(encoding="utf-8"))
        self.checksum = self.meta["dataset_checksum"]

    @property
    def label(self) -> str:
        return self.meta["model"]

    def dataset(self):
        schema = CellSchema.from_mapping(self.meta.get("cell_schema"))
        ds = load_dir(self.path / "dataset", schema)
        if dataset_checksum(ds) != self.checksum:
            raise DatasetError(f"{self.path}: stored dataset does not match its checksum")
        return ds

    def model(self, ds) -> HierarchicalModel:
        return HierarchicalModel(ds, ModelConfig.from_mapping(self.meta["model_config"]))

    def draws(self) -> DrawsMatrix:
        return DrawsMatrix.from_csv((self.path / "draws.csv").read_text(encoding="utf-8"))

    def loglik(self) -> np.ndarray:
        return np.load(self.path / "loglik.npy", allow_pickle=False)


def cmd_estimate(args) -> int:
    art = FitArtifact(args.fit)
    tree = load_tree(args.config)
    set_path(tree, "level", args.level)
    level = float(tree.get("level", 0.95))
    allow = args.allow_nonconverged or bool(tree.get("allow_nonconverged", False))
    if not art.meta["converged"] and not allow:
        raise ConvergenceError(f"{art.path} is flagged non-converged; pass --allow-nonconverged")
    ds = art.dataset()
    model = art.model(ds)
    draws = art.draws()
    if draws.R < 100:
        raise ConfigError(f"{art.path} holds {draws.R} draws; area summaries need at least 100")
    post = posterior_from_draws(model, draws.flat(), level)
    direct = direct_table(ds)
    shares = coverage_shares(ds.counts, partition_cells(ds), ds.area_ids)
    out = Path(args.out) if args.out else art.path
    _write_text(out / "area_estimates.csv", area_estimates_csv(post, direct))
    _write_text(out / "coverage_shares.csv", shares.to_csv())
    _write_text(out / "coverage_summary.csv", shares.summary_csv())
    _write_text(out / "se_ratios.csv", se_ratios_csv(post, direct))
    print(f"{ds.m} area estimates written to {out / 'area_estimates.csv'}")
    return 0


def cmd_compare(args) -> int:
    arts = [FitArtifact(p) for p in args.fits]
    sums = {a.checksum for a in arts}
    if len(sums) > 1:
        raise DatasetError("fits were made on different datasets (checksums differ)")
    labels = [a.label for a in arts]
    if len(set(labels)) != len(labels):
        labels = [f"{a.label}@{a.path.name}" for a in arts]
    reports = [elpd_loo(a.loglik(), lab) for a, lab in zip(arts, labels)]
    table = compare_csv(reports)
    out = Path(args.out) if args.out else Path(".")
    _write_text(out / "model_comparison.csv", table)
    _write_text(out / "elpd.csv", elpd_csv(reports))
    _write_text(out / "pareto_k.csv", pareto_k_csv(reports))
    sys.stdout.write(table)
    return 0


def _replicate_job(payload):
    cfg_map, rep, out = payload
    cfg = SimConfig.from_mapping(cfg_map)
    result, ds, _ = run_replicate(cfg, rep, keep_dataset=True)
    if out is not None:
        write_dataset(ds, Path(out) / "datasets" / f"rep_{rep + 1:03d}")
    return result


def cmd_simulate(args) -> int:
    tree = load_tree(args.config)
    spec = dict(tree.get("simulation") or {})
    set_path(spec, "replicates", args.reps)
    set_path(spec, "seed", args.seed)
    set_path(spec, "chains", args.chains)
    set_path(spec, "iterations", args.iterations)
    set_path(spec, "warmup", args.warmup)
    cfg = SimConfig.from_mapping(spec)
    out = Path(args.out or tree.get("output") or "simulation")
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "sim_config.yaml", yaml.safe_dump({"simulation": cfg.to_mapping()}, sort_keys=True))
    jobs = [(cfg.to_mapping(), r, str(out) if args.write_datasets else None)
            for r in range(cfg.replicates)]
    workers = max(1, int(os.environ.get("HBSAE_NUM_THREADS", "1") or 1))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_replicate_job, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_replicate_job(job))
            log.info("replicate %d/%d done", len(results), cfg.replicates)
    report = evaluate_recovery(results, min_replicates=args.min_replicates)
    _write_text(out / "recovery_report.csv", report.pooled_csv())
    _write_text(out / "recovery_replicates.csv", report.replicates_csv())
    _write_text(out / "recovery_by_area.csv", report.by_area_csv())
    _write_text(out / "se_ratio_bins.csv", report.se_ratio_csv())
    _write_text(out / "recovery_summaries.csv", report.summaries_csv())
    sys.stdout.write(report.pooled_csv())
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--data", help="directory holding survey.csv, census.csv, area_covariates.csv")
    p.add_argument("--survey", help="survey CSV (overrides data.survey)")
    p.add_argument("--census", help="census cell-count CSV")
    p.add_argument("--covariates", help="area covariate CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hbsae", description="Hierarchical Bayes small-area estimation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check dataset invariants without fitting")
    _data_args(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("direct", help="design-based direct estimates")
    _data_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_direct)

    p = sub.add_parser("fit", help="sample the posterior of one model")
    _data_args(p)
    p.add_argument("--model", help="preset M1..M4")
    p.add_argument("--weight-transform", choices=["identity", "id", "log", "inverse", "inv", "none"])
    p.add_argument("--parameterization", choices=["centered", "noncentered"])
    p.add_argument("--chains", type=int)
    p.add_argument("--iterations", "--iters", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--target-accept", type=float)
    p.add_argument("--algorithm", choices=["nuts", "rwm"])
    p.add_argument("--allow-nonconverged", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("estimate", help="area estimates from a fit directory")
    p.add_argument("fit")
    p.add_argument("--config")
    p.add_argument("--level", type=float)
    p.add_argument("--allow-nonconverged", action="store_true")
    p.add_argument("--out", help="defaults to the fit directory")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("compare", help="PSIS-LOO comparison of fits on one dataset")
    p.add_argument("fits", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("simulate", help="recovery study on synthetic populations")
    p.add_argument("--config")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--chains", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--min-replicates", type=int, default=30)
    p.add_argument("--write-datasets", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except HBSAEError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - map anything unexpected to the internal code
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
