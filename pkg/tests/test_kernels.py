"""The compiled and pure-numpy kernels must agree."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hbsae import kernels


def random_inputs(seed, n=200, A=8, m=6, G=2, R=5, scale=1.0):
    rng = np.random.default_rng(seed)
    rec = dict(
        intercept_idx=rng.integers(0, A, n),
        area_idx=rng.integers(0, m, n),
        gender_idx=rng.integers(0, G, n),
        age=rng.normal(size=n),
        hw=rng.normal(size=n),
    )
    y = rng.integers(0, 2, n).astype(np.float64)
    point = dict(alpha=scale * rng.normal(size=A), area_eta=scale * rng.normal(size=m),
                 xi=scale * rng.normal(size=G), lam=float(scale * rng.normal()))
    draws = dict(alpha=scale * rng.normal(size=(R, A)), area_eta=scale * rng.normal(size=(R, m)),
                 xi=scale * rng.normal(size=(R, G)), lam=scale * rng.normal(size=R))
    return rec, y, point, draws


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.1, 1.0, 30.0]))
def test_loglik_grad_backends_agree(seed, scale):
    rec, y, point, _ = random_inputs(seed, scale=scale)
    a = kernels._loglik_grad_numba(*rec.values(), y, *point.values())
    b = kernels._loglik_grad_numpy(*rec.values(), y, *point.values())
    assert a[0] == pytest.approx(b[0], rel=1e-11, abs=1e-9)
    for u, v in zip(a[1:], b[1:]):
        np.testing.assert_allclose(u, v, rtol=1e-10, atol=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_draw_kernels_agree(seed):
    rec, y, _, draws = random_inputs(seed)
    np.testing.assert_allclose(kernels._eta_draws_numba(*rec.values(), *draws.values()),
                               kernels._eta_draws_numpy(*rec.values(), *draws.values()),
                               rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(kernels._loglik_draws_numba(*rec.values(), y, *draws.values()),
                               kernels._loglik_draws_numpy(*rec.values(), y, *draws.values()),
                               rtol=1e-12, atol=1e-13)


def test_loglik_grad_matches_draw_kernel_sum():
    rec, y, point, _ = random_inputs(3)
    ll = kernels.loglik_grad(*rec.values(), y, *point.values())[0]
    lld = kernels.loglik_draws(*rec.values(), y, point["alpha"][None], point["area_eta"][None],
                               point["xi"][None], np.array([point["lam"]]))
    assert ll == pytest.approx(lld.sum(), rel=1e-12)


def test_extreme_eta_stays_finite():
    rec, y, point, _ = random_inputs(5, scale=400.0)
    for fn in (kernels._loglik_grad_numba, kernels._loglik_grad_numpy):
        out = fn(*rec.values(), y, *point.values())
        assert np.isfinite(out[0])
        assert all(np.isfinite(g).all() for g in out[1:])


def test_expit_and_softplus_limits():
    assert kernels.expit(0.0) == 0.5
    assert kernels.expit(-800.0) == 0.0
    assert kernels.expit(800.0) == 1.0
    x = np.array([-700.0, -30.0, 0.0, 30.0, 700.0])
    sp = kernels.softplus(x)
    assert np.isfinite(sp).all()
    np.testing.assert_allclose(sp[[0, -1]], [0.0, 700.0], atol=1e-300)
    np.testing.assert_allclose(kernels.bernoulli_logpmf(0.0, 1), np.log(0.5))


def test_backend_name():
    assert kernels.BACKEND in ("numba", "numpy")
