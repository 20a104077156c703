"""Survey-weighted direct estimates per area."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import LinkedDataset
from .errors import NoSample, NonpositiveWeight


@dataclass(frozen=True)
class DirectEstimate:
    area_id: int
    estimate: float | None
    se: float | None
    n_i: int

    @property
    def no_sample(self) -> bool:
        return self.n_i == 0


def direct_estimate(y, weight, area_id: int = 0) -> DirectEstimate:
    """Weighted proportion and its linearized standard error.

    ``se**2 = sum(w**2 * (y - p)**2) / sum(w)**2``, with no finite-population
    or small-sample correction.
    """
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(weight, dtype=np.float64)
    if y.size == 0:
        raise NoSample(f"area {area_id} has no sampled records")
    if (w <= 0).any() or not np.isfinite(w).all():
        raise NonpositiveWeight("weights must be positive and finite")
    total = w.sum()
    p = float(np.dot(w, y) / total)
    p = min(max(p, 0.0), 1.0)
    se = math.sqrt(float(np.sum(w**2 * (y - p) ** 2))) / total
    return DirectEstimate(area_id, p, se, int(y.size))


def direct_table(ds: LinkedDataset) -> list[DirectEstimate]:
    """One estimate per census area, ordered by area id; empty areas are flagged."""
    rows = []
    bounds = np.searchsorted(ds.area, np.arange(ds.m + 1))
    for i, a in enumerate(ds.area_ids.tolist()):
        lo, hi = bounds[i], bounds[i + 1]
        if hi == lo:
            rows.append(DirectEstimate(a, None, None, 0))
        else:
            rows.append(direct_estimate(ds.y[lo:hi], ds.weight[lo:hi], a))
    return rows
