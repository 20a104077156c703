import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hbsae.diagnostics import (autocovariance, ess, mcse_mean, split_chains, split_rhat,
                               summarize)
from hbsae.errors import ZeroVariance


def ar1(phi, n, chains, seed):
    rng = np.random.default_rng(seed)
    e = rng.normal(size=(chains, n))
    x = np.empty_like(e)
    x[:, 0] = e[:, 0] / math.sqrt(1 - phi**2)
    for t in range(1, n):
        x[:, t] = phi * x[:, t - 1] + e[:, t]
    return x


# -- R-hat ------------------------------------------------------------------------


def test_split_rhat_hand_oracle():
    x = np.array([[1.0, 2.0, 3.0, 4.0], [2.0, 2.0, 5.0, 1.0]])
    halves = np.array([[1, 2], [3, 4], [2, 2], [5, 1]], dtype=float)
    n = 2
    W = np.mean([np.var(h, ddof=1) for h in halves])
    B = n * np.var(halves.mean(axis=1), ddof=1)
    expected = math.sqrt(((n - 1) / n * W + B / n) / W)
    assert split_rhat(x) == pytest.approx(expected, rel=1e-14)


def test_separated_chains_have_large_rhat():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 500)) + np.array([0.0, 0.0, 3.0, 3.0])[:, None]
    assert split_rhat(x) > 1.5


def test_interleaved_iid_sequence_is_converged():
    seq = np.random.default_rng(1).normal(size=4000)
    x = seq.reshape(-1, 4).T  # round-robin over 4 chains
    assert split_rhat(x) <= 1.01


def test_trend_within_chain_detected_by_split():
    # every chain drifts identically: chain means agree but split halves do not
    x = np.tile(np.linspace(0, 5, 400), (4, 1)) + np.random.default_rng(2).normal(0, 0.1, (4, 400))
    assert split_rhat(x) > 1.5


def test_constant_draws_raise_zero_variance():
    with pytest.raises(ZeroVariance):
        split_rhat(np.ones((2, 10)))
    with pytest.raises(ZeroVariance):
        ess(np.ones((2, 10)))


def test_split_chains_drops_middle_draw_of_odd_chain():
    x = np.arange(10.0).reshape(2, 5)
    assert sorted(map(tuple, split_chains(x).tolist())) == [(0, 1), (3, 4), (5, 6), (8, 9)]


@given(st.integers(0, 2**31), st.floats(-100, 100), st.floats(0.01, 100))
def test_rhat_affine_invariant(seed, shift, scale):
    x = np.random.default_rng(seed).normal(size=(3, 40))
    assert split_rhat(shift + scale * x) == pytest.approx(split_rhat(x), rel=1e-9)


# -- ESS ------------------------------------------------------------------------------


def test_autocovariance_matches_direct_sum():
    x = np.random.default_rng(3).normal(size=37)
    c = x - x.mean()
    direct = [np.sum(c[: 37 - k] * c[k:]) / 37 for k in range(37)]
    np.testing.assert_allclose(autocovariance(x), direct, atol=1e-12)


def test_iid_ess_within_ten_percent():
    x = np.random.default_rng(4).normal(size=(4, 5000))
    assert abs(ess(x) / x.size - 1) < 0.10


@pytest.mark.parametrize("phi", [0.5, 0.9])
def test_ar1_ess_within_25_percent(phi):
    x = ar1(phi, 5000, 4, seed=5)
    truth = x.size * (1 - phi) / (1 + phi)
    assert abs(ess(x) / truth - 1) < 0.25


def test_ess_capped_at_total_draws():
    # anticorrelated draws would give ESS above R without the cap
    x = ar1(-0.7, 2000, 2, seed=6)
    assert ess(x) <= x.size


def test_mcse_mean_covers_truth():
    x = np.random.default_rng(7).normal(size=(4, 2000))
    assert abs(x.mean()) < 4 * mcse_mean(x)
    assert mcse_mean(x) == pytest.approx(1 / math.sqrt(8000), rel=0.15)


# -- summary table -----------------------------------------------------------------------


def test_summarize_arithmetic_and_columns():
    rng = np.random.default_rng(8)
    draws = rng.normal(size=(2, 100, 3))
    t = summarize(draws, ["a", "b", "c"])
    assert t.header == ["mean", "se_mean", "sd", "10%", "15%", "85%", "90%", "n_eff", "Rhat"]
    flat = draws.reshape(200, 3)
    np.testing.assert_allclose(t.mean, flat.mean(axis=0), rtol=1e-14)
    np.testing.assert_allclose(t.sd, flat.std(axis=0, ddof=1), rtol=1e-14)
    # type-7 quantile: linear interpolation between order statistics at h = (N - 1) p
    s = np.sort(flat[:, 1])
    h = 199 * 0.15
    lo = int(math.floor(h))
    q15 = s[lo] + (h - lo) * (s[lo + 1] - s[lo])
    assert t.row("b")["15%"] == pytest.approx(q15, rel=1e-14)
    np.testing.assert_allclose(t.se_mean, t.sd / np.sqrt(t.n_eff))
    assert t.row("c")["Rhat"] == pytest.approx(split_rhat(draws[:, :, 2]))
    lines = t.to_csv().splitlines()
    assert lines[0] == "parameter,mean,se_mean,sd,10%,15%,85%,90%,n_eff,Rhat"
    assert [l.split(",")[0] for l in lines[1:]] == ["a", "b", "c"]


def test_summarize_single_chain_reports_nan_rhat():
    t = summarize(np.random.default_rng(9).normal(size=(50, 2)))
    assert np.isnan(t.rhat).all()
    assert np.isfinite(t.n_eff).all()
    assert "NA" in t.to_csv()


def test_nonconverged_listing():
    rng = np.random.default_rng(10)
    draws = rng.normal(size=(2, 200, 2))
    draws[1, :, 1] += 5
    t = summarize(draws, ["ok", "bad"])
    assert t.nonconverged() == ["bad"]
    assert t.max_rhat() > 1.5
