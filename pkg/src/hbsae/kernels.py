"""Hot numeric kernels.

Each kernel exists twice: an explicit-loop version compiled with numba and a
vectorized pure-numpy version. Both compute the same quantities; the module
level names dispatch to one of them. Set ``HBSAE_DISABLE_NUMBA=1`` (or run
without numba installed) to force the numpy path.

Record-level inputs shared by the kernels, all length ``n``:

``intercept_idx``
    race x ethnicity intercept slot of the record.
``area_idx``
    dense area index.
``gender_idx``
    which gender-specific age slope applies.
``age``
    age covariate (possibly standardized).
``hw``
    transformed survey weight; all zeros when the weight term is off.
``y``
    0/1 outcome.
"""

from __future__ import annotations

import math
import os

import numpy as np

_FLAG = os.environ.get("HBSAE_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and _FLAG not in {"1", "true", "yes", "on"}


def _njit(fn):
    if numba is None:  # pragma: no cover
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# scalar helpers
# ---------------------------------------------------------------------------


def expit(eta):
    """Logistic function, stable for any finite input."""
    eta = np.asarray(eta, dtype=np.float64)
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def bernoulli_logpmf(eta, y):
    """Bernoulli log-mass of ``y`` at success probability expit(eta)."""
    eta = np.asarray(eta, dtype=np.float64)
    y = np.asarray(y)
    return -softplus(np.where(y > 0, -eta, eta))


# ---------------------------------------------------------------------------
# log-likelihood and gradient at one parameter point
# ---------------------------------------------------------------------------


@_njit
def _loglik_grad_numba(intercept_idx, area_idx, gender_idx, age, hw, y,
                       alpha, area_eta, xi, lam):
    n = y.shape[0]
    g_alpha = np.zeros(alpha.shape[0])
    g_area = np.zeros(area_eta.shape[0])
    g_xi = np.zeros(xi.shape[0])
    g_lam = 0.0
    ll = 0.0
    for k in range(n):
        eta = (alpha[intercept_idx[k]] + area_eta[area_idx[k]]
               + age[k] * xi[gender_idx[k]] + lam * hw[k])
        if eta >= 0.0:
            e = math.exp(-eta)
            theta = 1.0 / (1.0 + e)
            sp = eta + math.log1p(e)  # log(1 + exp(eta))
        else:
            e = math.exp(eta)
            theta = e / (1.0 + e)
            sp = math.log1p(e)
        if y[k] > 0:
            ll += eta - sp
            r = 1.0 - theta
        else:
            ll -= sp
            r = -theta
        g_alpha[intercept_idx[k]] += r
        g_area[area_idx[k]] += r
        g_xi[gender_idx[k]] += r * age[k]
        g_lam += r * hw[k]
    return ll, g_alpha, g_area, g_xi, g_lam


def _loglik_grad_numpy(intercept_idx, area_idx, gender_idx, age, hw, y,
                       alpha, area_eta, xi, lam):
    eta = alpha[intercept_idx] + area_eta[area_idx] + age * xi[gender_idx] + lam * hw
    ll = float(np.sum(bernoulli_logpmf(eta, y)))
    r = y - expit(eta)
    g_alpha = np.bincount(intercept_idx, weights=r, minlength=alpha.shape[0])
    g_area = np.bincount(area_idx, weights=r, minlength=area_eta.shape[0])
    g_xi = np.bincount(gender_idx, weights=r * age, minlength=xi.shape[0])
    g_lam = float(np.dot(r, hw))
    return ll, g_alpha, g_area, g_xi, g_lam


# ---------------------------------------------------------------------------
# linear predictor and pointwise log-likelihood over many draws
# ---------------------------------------------------------------------------


@_njit
def _eta_draws_numba(intercept_idx, area_idx, gender_idx, age, hw,
                     alpha, area_eta, xi, lam):
    n_draws = alpha.shape[0]
    n = intercept_idx.shape[0]
    out = np.empty((n_draws, n))
    for r in range(n_draws):
        for k in range(n):
            out[r, k] = (alpha[r, intercept_idx[k]] + area_eta[r, area_idx[k]]
                         + age[k] * xi[r, gender_idx[k]] + lam[r] * hw[k])
    return out


def _eta_draws_numpy(intercept_idx, area_idx, gender_idx, age, hw,
                     alpha, area_eta, xi, lam):
    return (alpha[:, intercept_idx] + area_eta[:, area_idx]
            + xi[:, gender_idx] * age + lam[:, None] * hw)


@_njit
def _loglik_draws_numba(intercept_idx, area_idx, gender_idx, age, hw, y,
                        alpha, area_eta, xi, lam):
    n_draws = alpha.shape[0]
    n = intercept_idx.shape[0]
    out = np.empty((n_draws, n))
    sign = 1.0 - 2.0 * y
    for r in range(n_draws):
        a, v, x, l = alpha[r], area_eta[r], xi[r], lam[r]
        row = out[r]
        # signed predictor first, then a branch-free -softplus pass
        for k in range(n):
            row[k] = sign[k] * (a[intercept_idx[k]] + v[area_idx[k]]
                                + age[k] * x[gender_idx[k]] + l * hw[k])
        for k in range(n):
            e = row[k]
            row[k] = -(max(e, 0.0) + math.log1p(math.exp(-abs(e))))
    return out


def _loglik_draws_numpy(intercept_idx, area_idx, gender_idx, age, hw, y,
                        alpha, area_eta, xi, lam):
    eta = _eta_draws_numpy(intercept_idx, area_idx, gender_idx, age, hw,
                           alpha, area_eta, xi, lam)
    return bernoulli_logpmf(eta, y[None, :])


if USE_NUMBA:
    loglik_grad = _loglik_grad_numba
    eta_draws = _eta_draws_numba
    loglik_draws = _loglik_draws_numba
else:
    loglik_grad = _loglik_grad_numpy
    eta_draws = _eta_draws_numpy
    loglik_draws = _loglik_draws_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
