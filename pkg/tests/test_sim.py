import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from hbsae.aggregate import posterior_area_summary
from hbsae.data import DEFAULT_SCHEMA, dataset_checksum, load_dir, write_dataset
from hbsae.direct import DirectEstimate
from hbsae.errors import ConfigError, EmptySample, InsufficientReplicates
from hbsae.sim import (ReplicateResult, SimConfig, default_sample_sizes, draw_sample,
                       evaluate_recovery, gen_population, replicate_seeds, run_replicate,
                       simulated_dataset)


def flat_truth(**kw):
    return SimConfig(m=4, alpha=(0.0,) * 8, xi=(0.0, 0.0), beta={}, sigma_v=0.0, **kw)


def test_default_sample_sizes():
    sizes = default_sample_sizes(20, 1000)
    assert sizes[0] == 0 and len(sizes) == 20
    assert sizes[1] == 3
    assert abs(sum(sizes) - 1000) <= 10
    assert list(sizes[1:]) == sorted(sizes[1:])


@given(st.integers(2, 60), st.integers(100, 20000))
def test_default_sample_sizes_hit_total(m, total):
    assume(total >= 3 * (m - 1))  # every sampled area gets at least 3
    sizes = default_sample_sizes(m, total)
    assert len(sizes) == m and sizes[0] == 0
    # only rounding separates the geometric series from the target
    assert abs(sum(sizes) - total) <= m / 2 + 1


def test_flat_truth_gives_one_half():
    pop = gen_population(flat_truth(), replicate_seeds(1, 0)[0])
    assert (pop.theta == 0.5).all()
    # binomial error of a mean over tens of thousands of units
    se = np.sqrt(0.25 / np.bincount(pop.unit_area))
    assert (np.abs(pop.truth - 0.5) < 4 * se).all()


def test_extreme_intercept_gives_near_zero():
    cfg = SimConfig(m=3, alpha=(-10.0,) * 8, xi=(0.0, 0.0), beta={}, sigma_v=0.0)
    pop = gen_population(cfg, replicate_seeds(2, 0)[0])
    assert (pop.truth < 1e-3).all()


def test_truth_is_exact_mean_of_generated_outcomes():
    pop = gen_population(SimConfig(m=5), replicate_seeds(3, 0)[0])
    for j in range(5):
        ys = [int(pop.y[k]) for k in range(pop.N) if pop.unit_area[k] == j]
        assert pop.truth[j] == sum(ys) / len(ys)
        assert len(ys) == pop.counts[j].sum()


def test_constant_propensity_gives_constant_weights():
    cfg = SimConfig(m=3, informativeness=0.0, sample_sizes=(40, 60, 80))
    ds, pop = simulated_dataset(cfg)
    for j in range(3):
        w = np.asarray(ds.weight)[np.asarray(ds.area) == j]
        assert np.ptp(w) == 0.0
        # expected sample size N_i * pi equals the target
        assert pop.counts[j].sum() / w[0] == pytest.approx(cfg.targets[j], rel=1e-9)


def test_informative_design_biases_unweighted_mean_only():
    cfg = SimConfig(m=4, informativeness=1.0, sample_sizes=(150,) * 4)
    rng = replicate_seeds(4, 0)[0]
    pop = gen_population(cfg, rng)
    unweighted, weighted = [], []
    for _ in range(40):
        ds = draw_sample(pop, cfg, rng)
        y, w, a = (np.asarray(v, dtype=float) for v in (ds.y, ds.weight, ds.area))
        for j in range(4):
            s = a == j
            unweighted.append(y[s].mean() - pop.truth[j])
            weighted.append((w[s] * y[s]).sum() / w[s].sum() - pop.truth[j])
    assert np.mean(unweighted) > 0.05
    assert abs(np.mean(weighted)) < 0.02


def test_zero_target_area_absent_from_sample_but_in_census():
    ds, pop = simulated_dataset(SimConfig(m=5, sample_sizes=(0, 20, 20, 20, 20)))
    assert ds.n_i[0] == 0
    assert ds.counts[0].sum() == pop.counts[0].sum() > 0
    assert 1 in ds.area_ids.tolist()


def test_empty_sample_raises():
    cfg = SimConfig(m=2, sample_sizes=(0, 0))
    rng = replicate_seeds(5, 0)[0]
    with pytest.raises(EmptySample):
        draw_sample(gen_population(cfg, rng), cfg, rng)


def test_sample_roundtrips_through_data_files(tmp_path):
    ds, _ = simulated_dataset(SimConfig(m=4, total_sample=120, seed=3))
    write_dataset(ds, tmp_path)
    assert dataset_checksum(load_dir(tmp_path)) == dataset_checksum(ds)


def test_replicates_are_deterministic_and_distinct():
    cfg = SimConfig(m=3, total_sample=60)
    a, _ = simulated_dataset(cfg, 1)
    b, _ = simulated_dataset(cfg, 1)
    c, _ = simulated_dataset(cfg, 2)
    assert dataset_checksum(a) == dataset_checksum(b) != dataset_checksum(c)
    assert replicate_seeds(9, 1)[1] == replicate_seeds(9, 1)[1] != replicate_seeds(9, 2)[1]


def test_config_mapping_roundtrip_and_validation(tmp_path):
    cfg = SimConfig(m=5, sample_sizes=(0, 1, 2, 3, 4), beta={"comorbidity": -0.5})
    assert SimConfig.from_mapping(cfg.to_mapping()) == cfg
    p = tmp_path / "sim.yaml"
    p.write_text("simulation:\n  m: 7\n  seed: 3\n")
    assert SimConfig.from_file(p) == SimConfig(m=7, seed=3)
    for bad in ({"m": 1}, {"unknown": 1}, {"beta": {"nope": 1.0}}, {"m": 3, "sample_sizes": [1]}):
        with pytest.raises(ConfigError):
            SimConfig.from_mapping(bad)


def test_schema_mismatch_rejected():
    with pytest.raises(ConfigError):
        gen_population(SimConfig(m=2, alpha=(0.0,) * 3), replicate_seeds(0, 0)[0], DEFAULT_SCHEMA)


# -- recovery evaluation ------------------------------------------------------------------


def oracle_replicates(n_reps, m=6, seed=0, sd=0.05):
    """Posteriors that are Normal(truth + sd * noise, sd): 95% intervals cover 95% of the time."""
    rng = np.random.default_rng(seed)
    n_i = np.array([0, 3, 8, 20, 60, 150])[:m]
    out = []
    for r in range(n_reps):
        truth = rng.uniform(0.2, 0.5, m)
        centre = truth + sd * rng.standard_normal(m)
        draws = centre + sd * rng.standard_normal((2000, m))
        post = posterior_area_summary(draws, np.arange(1, m + 1))
        direct = [DirectEstimate(int(a), None if n == 0 else 0.3,
                                 None if n == 0 else 2 * sd, int(n))
                  for a, n in zip(range(1, m + 1), n_i)]
        out.append(ReplicateResult.from_posterior(r, post, direct, truth, np.zeros(m)))
    return out


def test_truth_centred_oracle_gives_nominal_coverage():
    rep = evaluate_recovery(oracle_replicates(300))
    assert rep.pooled["coverage"] == pytest.approx(0.95, abs=0.02)
    assert rep.pooled["median_se_ratio_n_le_10"] == pytest.approx(2.0, rel=0.05)
    assert rep.pooled["mean_bias"] == pytest.approx(0.0, abs=0.005)


def test_insufficient_replicates():
    reps = oracle_replicates(40)
    for r in reps[:15]:
        r.converged = False
    with pytest.raises(InsufficientReplicates):
        evaluate_recovery(reps)
    rep = evaluate_recovery(reps, min_replicates=20)
    assert rep.pooled["converged_replicates"] == 25


def test_divergent_replicate_is_flagged_not_raised(monkeypatch):
    import hbsae.pipeline as pipeline
    from hbsae.errors import DivergenceRateExceeded

    real = pipeline.run_chains

    def diverging(*args, **kwargs):
        exc = DivergenceRateExceeded("too many divergences")
        exc.draws = real(*args, **kwargs)
        raise exc

    monkeypatch.setattr(pipeline, "run_chains", diverging)
    cfg = SimConfig(m=4, total_sample=200, seed=2, iterations=200, warmup=100)
    res = run_replicate(cfg, 0)
    assert not res.converged
    assert np.isfinite(res.hb_mean).all()


def test_report_tables_layout():
    rep = evaluate_recovery(oracle_replicates(30))
    lines = rep.summaries_csv().splitlines()
    assert lines[0] == "quantity,min,1st Qu.,median,mean,3rd Qu.,max"
    assert [l.split(",")[0] for l in lines[1:]] == ["direct estimate", "HB estimate",
                                                    "direct se", "HB sd"]
    bins = rep.se_ratio_csv().splitlines()
    assert bins[0] == "n_bin,area_replicates,median_se_ratio,mean_se_ratio"
    assert [b.split(",")[0] for b in bins[1:]] == ["1-10", "11-30", "31-100", ">100"]
    assert rep.pooled_csv().splitlines()[0] == "metric,value"
    assert len(rep.replicates_csv().splitlines()) == 31
    assert len(rep.by_area_csv().splitlines()) == 7


@pytest.mark.slow
def test_noninformative_design_is_unbiased():
    # no weight term, constant propensity, about 1000 units per cell
    cfg = SimConfig(informativeness=0.0, model="M4", count_range=(900, 1100))
    rep = evaluate_recovery([run_replicate(cfg, r) for r in range(100)])
    assert abs(rep.pooled["mean_bias"]) < 0.02
