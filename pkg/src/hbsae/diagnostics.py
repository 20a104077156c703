"""Convergence diagnostics and posterior summaries for MCMC draws.

Draw arrays for a single parameter are shaped ``(chains, draws)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ZeroVariance

DEFAULT_QUANTILES = (0.10, 0.15, 0.85, 0.90)


def _as_chains(draws) -> np.ndarray:
    x = np.asarray(draws, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("expected draws shaped (chains, draws)")
    return x


def split_chains(draws) -> np.ndarray:
    """Split every chain into two halves; the middle draw of odd-length chains is dropped."""
    x = _as_chains(draws)
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)


def split_rhat(draws) -> float:
    """Potential scale reduction on split chains.

    ``R = sqrt((W (n - 1) / n + B / n) / W)`` where n is the half-chain length,
    W the mean within-half variance and B / n the variance of the half means.
    """
    x = _as_chains(draws)
    if x.shape[0] < 2 or x.shape[1] < 4:
        raise ValueError("split_rhat needs at least 2 chains of 4 draws")
    s = split_chains(x)
    n = s.shape[1]
    W = float(np.mean(np.var(s, axis=1, ddof=1)))
    if not W > 0:
        raise ZeroVariance("within-chain variance is zero")
    B_over_n = float(np.var(s.mean(axis=1), ddof=1))
    return math.sqrt((W * (n - 1) / n + B_over_n) / W)


def autocovariance(x) -> np.ndarray:
    """Biased (divide-by-n) autocovariance of a 1-D series at all lags, via FFT."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x - x.mean(), size)
    return np.fft.irfft(f * np.conjugate(f), size)[:n] / n


def _ess_chains(x: np.ndarray) -> float:
    m, n = x.shape
    acov = np.array([autocovariance(c) for c in x])
    chain_var = acov[:, 0] * n / (n - 1.0)
    mean_var = float(np.mean(chain_var))
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += float(np.var(x.mean(axis=1), ddof=1))
    if not var_plus > 0:
        raise ZeroVariance("draws have zero variance")
    mean_acov = acov.mean(axis=0)

    rho = np.zeros(n)
    rho[0] = 1.0
    even, odd = 1.0, 1.0 - (mean_var - mean_acov[1]) / var_plus
    rho[1] = odd
    # initial positive sequence over pairs of lags
    t = 1
    while t < n - 3 and even + odd > 0.0:
        even = 1.0 - (mean_var - mean_acov[t + 1]) / var_plus
        odd = 1.0 - (mean_var - mean_acov[t + 2]) / var_plus
        if even + odd >= 0.0:
            rho[t + 1], rho[t + 2] = even, odd
        t += 2
    max_t = t - 2
    if even > 0:
        rho[max_t + 1] = even
    # initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = 0.5 * (rho[t - 1] + rho[t])
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * np.sum(rho[: max_t + 1]) + np.sum(rho[max_t + 1: max_t + 2])
    tau = max(tau, 1.0 / math.log10(total))
    return total / tau


def ess(draws) -> float:
    """Effective sample size of split chains, capped at the total draw count."""
    x = _as_chains(draws)
    if x.shape[1] < 4:
        raise ValueError("ess needs at least 4 draws per chain")
    return min(_ess_chains(split_chains(x)), float(x.size))


def mcse_mean(draws) -> float:
    x = _as_chains(draws)
    return float(np.std(x, ddof=1) / math.sqrt(ess(x)))


def mcse_sd(draws) -> float:
    """Monte Carlo standard error of the posterior sd (delta method on the variance)."""
    x = _as_chains(draws)
    d2 = (x - x.mean()) ** 2
    sd = float(np.std(x, ddof=1))
    mcse_var = float(np.std(d2, ddof=1) / math.sqrt(ess(d2)))
    return mcse_var / (2.0 * sd)


@dataclass
class DiagnosticsTable:
    """Per-parameter posterior summary; columns follow ``header``."""

    names: list[str]
    mean: np.ndarray
    se_mean: np.ndarray
    sd: np.ndarray
    quantiles: np.ndarray
    probs: tuple[float, ...]
    n_eff: np.ndarray
    rhat: np.ndarray

    @property
    def header(self) -> list[str]:
        return (["mean", "se_mean", "sd"] + [_pct(p) for p in self.probs]
                + ["n_eff", "Rhat"])

    def rows(self) -> list[list[float]]:
        return [[self.mean[j], self.se_mean[j], self.sd[j], *self.quantiles[j],
                 self.n_eff[j], self.rhat[j]] for j in range(len(self.names))]

    def row(self, name: str) -> dict[str, float]:
        j = self.names.index(name)
        return dict(zip(self.header, self.rows()[j]))

    def max_rhat(self) -> float:
        finite = self.rhat[np.isfinite(self.rhat)]
        return float(finite.max()) if finite.size else float("nan")

    def nonconverged(self, threshold: float = 1.05) -> list[str]:
        return [n for n, r in zip(self.names, self.rhat) if np.isfinite(r) and r >= threshold]

    def to_csv(self, digits: int = 6) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["parameter"] + self.header)
        for name, row in zip(self.names, self.rows()):
            w.writerow([name] + [_num(v, digits) for v in row])
        return buf.getvalue()


def _pct(p: float) -> str:
    s = f"{100 * p:.6g}"
    return s + "%"


def _num(v: float, digits: int) -> str:
    if v is None or not np.isfinite(v):
        return "NA"
    return f"{v:.{digits}g}"


def summarize(draws, names: Sequence[str] | None = None,
              quantiles: Sequence[float] = DEFAULT_QUANTILES) -> DiagnosticsTable:
    """Mean, MCSE, sd, type-7 quantiles, ESS and split-R-hat per parameter.

    ``draws`` is ``(chains, draws, params)`` or ``(draws, params)`` for a single
    chain. Diagnostics that are undefined (one chain, too few draws, zero
    variance) are reported as NaN.
    """
    x = np.asarray(draws, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1] == 0:
        raise ValueError("expected nonempty draws shaped (chains, draws, params)")
    C, N, P = x.shape
    names = list(names) if names is not None else [f"p{j}" for j in range(P)]
    flat = x.reshape(C * N, P)
    mean = flat.mean(axis=0)
    sd = flat.std(axis=0, ddof=1) if C * N > 1 else np.zeros(P)
    qs = np.quantile(flat, quantiles, axis=0).T if len(quantiles) else np.empty((P, 0))
    n_eff = np.full(P, np.nan)
    rhat = np.full(P, np.nan)
    for j in range(P):
        if N >= 4:
            try:
                n_eff[j] = ess(x[:, :, j])
            except ZeroVariance:
                pass
        if C >= 2 and N >= 4:
            try:
                rhat[j] = split_rhat(x[:, :, j])
            except ZeroVariance:
                pass
    se_mean = sd / np.sqrt(n_eff)
    return DiagnosticsTable(names, mean, se_mean, sd, qs, tuple(quantiles), n_eff, rhat)
