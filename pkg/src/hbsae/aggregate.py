"""From record-level success probabilities to area-level finite-population proportions.

For area i, cells split into three sets: G1 (sampled in i), G2 (not sampled in
i, sampled elsewhere) and G3 (sampled nowhere). At each draw, G1 cells use
the weighted mean of their own records' probabilities, G2 cells use the
weighted mean pooled over the other areas, and G3 cells are dropped. Census
shares then combine the two sets:

    raw        = a1 * theta1 + a2 * theta2
    normalized = raw / (a1 + a2)
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass

import numpy as np

from .data import LinkedDataset
from .errors import EmptyCellSet, EmptyG2PoolCell

log = logging.getLogger(__name__)

RESIDUAL_WARNING = 0.05
SUMMARY_STATS = ("min", "1st Qu.", "median", "mean", "3rd Qu.", "max")


@dataclass(frozen=True)
class CellPartition:
    """Boolean masks ``(m, n_cells)``; exactly one is true per (area, cell)."""

    g1: np.ndarray
    g2: np.ndarray
    g3: np.ndarray

    def sets(self, i: int) -> tuple[set[int], set[int], set[int]]:
        return tuple(set(np.flatnonzero(mask[i]).tolist()) for mask in (self.g1, self.g2, self.g3))


def partition_cells(ds: LinkedDataset) -> CellPartition:
    g1 = ds.n_ig > 0
    anywhere = g1.any(axis=0)
    g2 = ~g1 & anywhere[None, :]
    g3 = np.broadcast_to(~anywhere, g1.shape).copy()
    return CellPartition(g1, g2, g3)


def summary_row(values) -> dict[str, float]:
    """min, quartiles (type 7), median, mean and max."""
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return {k: float("nan") for k in SUMMARY_STATS}
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    return dict(zip(SUMMARY_STATS, (float(v.min()), float(q1), float(med), float(v.mean()),
                                    float(q3), float(v.max()))))


@dataclass(frozen=True)
class CoverageShares:
    area_ids: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    residual: np.ndarray

    def summary(self) -> dict[str, float]:
        return summary_row(self.residual)

    def flagged(self, threshold: float = RESIDUAL_WARNING) -> np.ndarray:
        return self.area_ids[self.residual > threshold]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["area_id", "a1", "a2", "residual"])
        for row in zip(self.area_ids, self.a1, self.a2, self.residual):
            w.writerow([int(row[0])] + [f"{v:.10g}" for v in row[1:]])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["quantity"] + list(SUMMARY_STATS))
        w.writerow(["1 - a1 - a2"] + [f"{v:.4f}" for v in self.summary().values()])
        return buf.getvalue()


def coverage_shares(counts: np.ndarray, partition: CellPartition,
                    area_ids: np.ndarray | None = None,
                    warn_above: float = RESIDUAL_WARNING) -> CoverageShares:
    """Census population shares of G1 and G2 per area."""
    N = np.asarray(counts, dtype=np.float64)
    total = N.sum(axis=1)
    a1 = (N * partition.g1).sum(axis=1) / total
    a2 = (N * partition.g2).sum(axis=1) / total
    residual = (N * partition.g3).sum(axis=1) / total
    ids = np.arange(len(N)) if area_ids is None else np.asarray(area_ids)
    shares = CoverageShares(ids, a1, a2, residual)
    bad = shares.flagged(warn_above)
    if len(bad):
        log.warning("unsampled-cell share exceeds %.3g in area(s) %s; dropping those cells "
                    "is a poor approximation there", warn_above, bad.tolist())
    return shares


def cell_share_weights(counts: np.ndarray, partition: CellPartition, area: int,
                       which: int) -> dict[int, float]:
    """Census weights N_ig / sum N_ig over G1 (``which=1``) or G2 (``which=2``) of one area."""
    mask = {1: partition.g1, 2: partition.g2}[which][area]
    cells = np.flatnonzero(mask)
    if cells.size == 0:
        raise EmptyCellSet(f"G{which} of area index {area} is empty")
    N = np.asarray(counts, dtype=np.float64)[area, cells]
    total = N.sum()
    if not total > 0:
        raise EmptyCellSet(f"G{which} of area index {area} has zero population")
    return {int(g): float(n / total) for g, n in zip(cells, N)}


# ---------------------------------------------------------------------------
# per-draw mapping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellMeans:
    """Weighted cell means of record probabilities, ``(R, m, n_cells)``.

    ``own`` is NaN where the area has no records in the cell; ``syn`` pools the
    other areas and is NaN where no other area has records in the cell.
    """

    own: np.ndarray
    syn: np.ndarray


def cell_means(theta: np.ndarray, ds: LinkedDataset) -> CellMeans:
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    R = theta.shape[0]
    m, G = ds.counts.shape
    flat = ds.area * G + ds.cell
    S = np.zeros((R, m * G))
    for r in range(R):
        S[r] = np.bincount(flat, weights=ds.weight * theta[r], minlength=m * G)
    W = np.bincount(flat, weights=ds.weight, minlength=m * G)
    S = S.reshape(R, m, G)
    W = W.reshape(m, G)
    with np.errstate(invalid="ignore", divide="ignore"):
        own = np.where(W > 0, S / W, np.nan)
        S_other = S.sum(axis=1, keepdims=True) - S
        W_other = W.sum(axis=0, keepdims=True) - W
        syn = np.where(W_other > 0, S_other / W_other, np.nan)
    return CellMeans(own, syn)


class AreaAggregator:
    """Linear map from record probabilities to area proportions.

    Every area proportion is a fixed convex combination of the record-level
    probabilities, so the map is precomputed once as an ``(m, n)`` matrix.
    """

    def __init__(self, ds: LinkedDataset, partition: CellPartition | None = None):
        self.dataset = ds
        self.partition = partition or partition_cells(ds)
        self.shares = coverage_shares(ds.counts, self.partition, ds.area_ids,
                                      warn_above=np.inf)
        self.matrix = self._build()

    def _build(self) -> np.ndarray:
        ds, part = self.dataset, self.partition
        m, G = ds.counts.shape
        N = ds.counts.astype(np.float64)
        W_own = np.zeros((m, G))
        np.add.at(W_own, (ds.area, ds.cell), ds.weight)
        W_all = W_own.sum(axis=0)
        covered = N * (part.g1 | part.g2)
        denom = covered.sum(axis=1)

        A = np.zeros((m, ds.n))
        for i in range(m):
            if denom[i] <= 0:
                # nothing sampled anywhere: the area has no estimate
                A[i] = np.nan
                continue
            own = (ds.area == i) & part.g1[i, ds.cell]
            A[i, own] = N[i, ds.cell[own]] * ds.weight[own] / W_own[i, ds.cell[own]]
            g2_cells = np.flatnonzero(part.g2[i])
            if g2_cells.size:
                if (W_all[g2_cells] <= 0).any():
                    raise EmptyG2PoolCell(f"G2 cell of area index {i} has no donor records")
                donors = part.g2[i, ds.cell]
                A[i, donors] = N[i, ds.cell[donors]] * ds.weight[donors] / W_all[ds.cell[donors]]
            A[i] /= denom[i]
        return A

    @property
    def coverage(self) -> np.ndarray:
        """a1 + a2 per area."""
        return self.shares.a1 + self.shares.a2

    def normalized(self, theta: np.ndarray) -> np.ndarray:
        """Area proportions ``(R, m)`` from record probabilities ``(R, n)``."""
        return np.atleast_2d(theta) @ self.matrix.T

    def raw(self, theta: np.ndarray) -> np.ndarray:
        return self.normalized(theta) * self.coverage


def per_draw_area_proportion(theta: np.ndarray, ds: LinkedDataset,
                             partition: CellPartition | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Normalized and raw area proportions for each draw of record probabilities."""
    agg = AreaAggregator(ds, partition)
    return agg.normalized(theta), agg.raw(theta)


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AreaPosterior:
    area_ids: np.ndarray
    draws: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    raw_mean: np.ndarray | None = None
    level: float = 0.95


def posterior_area_summary(draws: np.ndarray, area_ids=None, level: float = 0.95,
                           raw: np.ndarray | None = None) -> AreaPosterior:
    """Mean, sd and equal-tailed interval (type-7 quantiles) of ``(R, m)`` draws."""
    x = np.atleast_2d(np.asarray(draws, dtype=np.float64))
    if x.shape[0] < 100:
        raise ValueError("need at least 100 draws for an area summary")
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(x, [tail, 1.0 - tail], axis=0)
    ids = np.arange(x.shape[1]) if area_ids is None else np.asarray(area_ids)
    raw_mean = None if raw is None else np.asarray(raw).mean(axis=0)
    # constant columns: report the value and zero spread exactly, free of summation error
    flat = np.ptp(x, axis=0) == 0
    mean = np.where(flat, x[0], x.mean(axis=0))
    sd = np.where(flat, 0.0, x.std(axis=0, ddof=1))
    return AreaPosterior(ids, x, mean, sd, lo, hi, raw_mean, level)


def _f(v, digits=6) -> str:
    if v is None or not np.isfinite(v):
        return "NA"
    return f"{v:.{digits}g}"


def area_estimates_csv(post: AreaPosterior, direct) -> str:
    """HB estimate, sd, interval and raw estimate next to the direct estimate."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["area_id", "hb_estimate", "hb_sd", "ci_lower", "ci_upper", "hb_raw",
                "direct", "direct_se", "n"])
    for j, d in enumerate(direct):
        w.writerow([int(post.area_ids[j]), _f(post.mean[j]), _f(post.sd[j]), _f(post.lower[j]),
                    _f(post.upper[j]), _f(post.raw_mean[j]) if post.raw_mean is not None else "NA",
                    _f(d.estimate), _f(d.se), d.n_i])
    return buf.getvalue()


def se_ratios(post: AreaPosterior, direct) -> list[tuple[int, int, float]]:
    """(area_id, n_i, direct se / HB sd) ordered by sample size; areas without sample skipped."""
    rows = []
    for j, d in enumerate(direct):
        if d.no_sample:
            continue
        ratio = d.se / post.sd[j] if post.sd[j] > 0 else float("nan")
        rows.append((int(post.area_ids[j]), d.n_i, float(ratio)))
    rows.sort(key=lambda r: (r[1], r[0]))
    return rows


def se_ratios_csv(post: AreaPosterior, direct) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["area_id", "n", "se_ratio"])
    for a, n, r in se_ratios(post, direct):
        w.writerow([a, n, _f(r)])
    return buf.getvalue()
