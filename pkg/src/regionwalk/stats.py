"""Summary statistics over per-path measurements.

Conventions are pinned so numbers are comparable across runs: the ECDF
is right-continuous, ranks average over ties (densities are integers,
ties are the norm), medians take the lower middle value, and positive
fractions count strictly positive differences. Across-seed spreads are
population standard deviations, so a single run reports zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError


def _clean(values, name: str = "values") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise InputError(f"{name} is empty")
    if not np.isfinite(arr).all():
        raise InputError(f"{name} contains non-finite entries")
    return arr


class Ecdf:
    """Right-continuous empirical CDF of a sample."""

    __slots__ = ("values", "n")

    def __init__(self, values):
        self.values = np.sort(_clean(values))
        self.n = int(self.values.size)

    def evaluate(self, x) -> np.ndarray | float:
        """F(x) = fraction of sample <= x."""
        out = np.searchsorted(self.values, np.asarray(x, dtype=np.float64), side="right") / self.n
        return out if out.ndim else float(out)

    def quantile(self, q) -> np.ndarray | float:
        """Smallest sample value v with F(v) >= q."""
        q = np.asarray(q, dtype=np.float64)
        if np.any(q < 0) or np.any(q > 1):
            raise InputError("quantile level must lie in [0, 1]")
        idx = np.clip(np.ceil(q * self.n).astype(np.intp) - 1, 0, self.n - 1)
        out = self.values[idx]
        return out if out.ndim else float(out)


def ecdf(values) -> Ecdf:
    return Ecdf(values)


def _average_ranks(a: np.ndarray) -> np.ndarray:
    # ranks 1..n with ties sharing their average rank
    order = np.argsort(a, kind="stable")
    ranks = np.empty(a.size, dtype=np.float64)
    sorted_a = a[order]
    i = 0
    while i < a.size:
        j = i
        while j + 1 < a.size and sorted_a[j + 1] == sorted_a[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(a, b) -> float:
    """Rank correlation: Pearson correlation of average ranks.

    Returns nan when either side has zero rank variance (all values
    tied), where the coefficient is undefined.
    """
    a = _clean(a, "a")
    b = _clean(b, "b")
    if a.size != b.size:
        raise InputError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise InputError("need at least 2 pairs")
    ra = _average_ranks(a)
    rb = _average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    va = float(ra @ ra)
    vb = float(rb @ rb)
    if va == 0.0 or vb == 0.0:
        return math.nan
    return float((ra @ rb) / math.sqrt(va * vb))


@dataclass
class PairedRun:
    """Per-path measurements of the same paths under two settings."""

    path_ids: list[str]
    dev_a: np.ndarray
    dev_b: np.ndarray
    den_a: np.ndarray
    den_b: np.ndarray

    def __post_init__(self):
        self.dev_a = _clean(self.dev_a, "dev_a")
        self.dev_b = _clean(self.dev_b, "dev_b")
        self.den_a = _clean(self.den_a, "den_a")
        self.den_b = _clean(self.den_b, "den_b")
        n = len(self.path_ids)
        if n == 0:
            raise InputError("paired run is empty")
        for name in ("dev_a", "dev_b", "den_a", "den_b"):
            if getattr(self, name).size != n:
                raise InputError(f"{name} has {getattr(self, name).size} entries for {n} paths")


def positive_fraction(differences) -> float:
    """Fraction of entries strictly greater than zero."""
    d = _clean(differences, "differences")
    return float(np.count_nonzero(d > 0) / d.size)


def lower_median(values) -> float:
    """Median taking the lower middle value on even counts."""
    v = np.sort(_clean(values))
    return float(v[(v.size - 1) // 2])


def median_summary(runs) -> tuple[float, float]:
    """Lower median per run, then mean and population std across runs."""
    runs = list(runs)
    if not runs:
        raise InputError("median_summary needs at least one run")
    meds = np.array([lower_median(r) for r in runs])
    return float(meds.mean()), float(meds.std(ddof=0))
