"""Pareto-smoothed importance-sampling leave-one-out cross-validation."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .sampler import DrawsMatrix
from .errors import MismatchedObservations, NonFiniteEntry, TooFewTailSamples

log = logging.getLogger(__name__)

K_WARN = 0.7
_PRIOR_BS = 3
_PRIOR_K = 10


def pointwise_loglik(model, draws) -> np.ndarray:
    """Log-likelihood of every observation at every draw, shape ``(R, n)``.

    ``draws`` is a DrawsMatrix or an ``(R, P)`` array on the model's
    unconstrained scale.
    """
    Q = draws.flat() if isinstance(draws, DrawsMatrix) else np.asarray(draws)
    ll = model.loglik_draws(Q)
    if not np.isfinite(ll).all():
        raise NonFiniteEntry("pointwise log-likelihood has non-finite entries")
    return ll


def gpd_fit(x) -> tuple[float, float]:
    """Shape ``k`` and scale ``sigma`` of a generalized Pareto fit to exceedances.

    Profile-likelihood empirical Bayes estimate in the Zhang-Stephens form,
    followed by the usual weakly informative shrinkage of ``k`` toward 0.5.
    """
    x = np.sort(np.asarray(x, dtype=np.float64))
    n = x.size
    if n < 5:
        raise TooFewTailSamples(f"need at least 5 exceedances, got {n}")
    m_est = 30 + int(math.sqrt(n))
    b = 1.0 - np.sqrt(m_est / (np.arange(1, m_est + 1, dtype=np.float64) - 0.5))
    b /= _PRIOR_BS * x[int(n / 4 + 0.5) - 1]
    b += 1.0 / x[-1]
    k = np.log1p(-b[:, None] * x).mean(axis=1)
    len_scale = n * (np.log(-(b / k)) - k - 1.0)
    w = np.exp(len_scale - logsumexp(len_scale))
    keep = w >= 10 * np.finfo(float).eps
    w, b = w[keep], b[keep]
    w /= w.sum()
    b_post = float(np.sum(b * w))
    k_post = float(np.log1p(-b_post * x).mean())
    sigma = -k_post / b_post
    k_post = (n * k_post + _PRIOR_K * 0.5) / (n + _PRIOR_K)
    return k_post, sigma


def gpd_quantile(p, k: float, sigma: float) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if abs(k) < np.finfo(float).eps:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def tail_length(R: int) -> int:
    return int(math.ceil(min(0.2 * R, 3.0 * math.sqrt(R))))


def psis_smooth(log_ratios) -> tuple[np.ndarray, float]:
    """Smoothed, normalized log-weights and the Pareto ``k`` of one observation.

    The largest ``min(0.2 R, 3 sqrt R)`` ratios are replaced by expected order
    statistics of the fitted generalized Pareto tail and capped at the largest
    raw ratio; all weights are then truncated at ``R**0.75`` times their mean.
    ``k`` is NaN when every ratio is equal (nothing to smooth) and
    +inf when the tail could not be fitted, in which case the raw ratios are
    only truncated and normalized.
    """
    x = np.array(log_ratios, dtype=np.float64)
    R = x.size
    if R < 100:
        raise ValueError(f"PSIS needs at least 100 draws, got {R}")
    x -= x.max()
    order = np.argsort(x, kind="stable")
    cutoff = max(x[order[-tail_length(R) - 1]], np.log(np.finfo(float).tiny))
    tail = np.flatnonzero(x > cutoff)
    if np.ptp(x) == 0.0:
        k = float("nan")
    elif tail.size <= 4:
        k = float("inf")
    else:
        tail = tail[np.argsort(x[tail], kind="stable")]
        exp_cut = math.exp(cutoff)
        try:
            k, sigma = gpd_fit(np.exp(x[tail]) - exp_cut)
        except TooFewTailSamples:
            k, sigma = float("inf"), float("nan")
        if np.isfinite(k) and sigma > 0:
            probs = (np.arange(tail.size) + 0.5) / tail.size
            x[tail] = np.log(gpd_quantile(probs, k, sigma) + exp_cut)
            np.minimum(x, 0.0, out=x)
        else:
            k = float("inf")
    # truncate at R^(3/4) times the mean weight
    np.minimum(x, logsumexp(x) - 0.25 * math.log(R), out=x)
    x -= logsumexp(x)
    return x, k


@dataclass(frozen=True)
class PsisResult:
    log_weights: np.ndarray
    k_hat: np.ndarray

    @property
    def flagged(self) -> np.ndarray:
        return np.flatnonzero(~(self.k_hat <= K_WARN) & ~np.isnan(self.k_hat))


def psis(loglik: np.ndarray) -> PsisResult:
    """PSIS for every column of an ``(R, n)`` log-likelihood matrix."""
    ll = np.asarray(loglik, dtype=np.float64)
    lw = np.empty_like(ll)
    k = np.empty(ll.shape[1])
    for j in range(ll.shape[1]):
        lw[:, j], k[j] = psis_smooth(-ll[:, j])
    return PsisResult(lw, k)


@dataclass(frozen=True)
class ElpdReport:
    elpd_loo: float
    se: float
    pointwise: np.ndarray
    k_hat: np.ndarray
    lpd: float
    label: str = ""

    @property
    def n(self) -> int:
        return self.pointwise.size

    @property
    def p_loo(self) -> float:
        return self.lpd - self.elpd_loo

    @property
    def n_flagged(self) -> int:
        return int(np.sum(self.k_hat > K_WARN))


def elpd_loo(loglik: np.ndarray, label: str = "") -> ElpdReport:
    ll = np.asarray(loglik, dtype=np.float64)
    if ll.ndim != 2 or not np.isfinite(ll).all():
        raise NonFiniteEntry("log-likelihood matrix must be finite and 2-D")
    res = psis(ll)
    pointwise = logsumexp(res.log_weights + ll, axis=0)
    n = pointwise.size
    se = math.sqrt(n * np.var(pointwise)) if n else 0.0
    lpd = float(np.sum(logsumexp(ll, axis=0) - math.log(ll.shape[0])))
    report = ElpdReport(float(pointwise.sum()), se, pointwise, res.k_hat, lpd, label)
    if report.n_flagged:
        log.warning("%s: %d observation(s) with Pareto k > %.1f", label or "model",
                    report.n_flagged, K_WARN)
    return report


def compare(a: ElpdReport, b: ElpdReport) -> tuple[float, float]:
    """``elpd_a - elpd_b`` and the standard error of the paired pointwise differences."""
    if a.n != b.n:
        raise MismatchedObservations(f"models scored on {a.n} and {b.n} observations")
    diff = a.pointwise - b.pointwise
    return float(diff.sum()), math.sqrt(a.n * np.var(diff)) if a.n else 0.0


def compare_table(reports: list[ElpdReport]) -> list[tuple[str, float, float]]:
    """Rows (label, elpd_diff, se_diff) against the best model, best first at (0, 0)."""
    if not reports:
        return []
    ranked = sorted(reports, key=lambda r: -r.elpd_loo)
    best = ranked[0]
    return [(r.label, *compare(r, best)) for r in ranked]


def compare_csv(reports: list[ElpdReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "elpd_diff", "se_diff"])
    for label, d, s in compare_table(reports):
        w.writerow([label, f"{d:.3f}", f"{s:.3f}"])
    return buf.getvalue()


def elpd_csv(reports: list[ElpdReport]) -> str:
    """Per-model elpd_loo, se, p_loo and whether |elpd_diff| exceeds se_diff."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "elpd_loo", "se", "p_loo", "n_k_gt_0.7", "diff_exceeds_se"])
    table = {label: (d, s) for label, d, s in compare_table(reports)}
    for r in sorted(reports, key=lambda r: -r.elpd_loo):
        d, s = table[r.label]
        w.writerow([r.label, f"{r.elpd_loo:.3f}", f"{r.se:.3f}", f"{r.p_loo:.3f}",
                    r.n_flagged, str(abs(d) > s and s > 0).lower()])
    return buf.getvalue()


def pareto_k_csv(reports: list[ElpdReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "observation", "k_hat", "flagged"])
    for r in reports:
        for j, k in enumerate(r.k_hat):
            w.writerow([r.label, j + 1, "NA" if np.isnan(k) else f"{k:.4f}",
                        str(bool(k > K_WARN)).lower()])
    return buf.getvalue()
