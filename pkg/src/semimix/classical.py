"""Two-sample comparator tests: labelled group ``a`` versus unlabelled ``b``.

All tests are two-sided and return ``(statistic, pvalue)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .errors import InputError, UndefinedStatisticError

EXACT_MWU_MAX_N = 20


@dataclass(frozen=True)
class TwoSample:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).ravel()
        b = np.asarray(self.b, dtype=float).ravel()
        if a.size == 0 or b.size == 0:
            raise InputError("both samples must be non-empty")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_dataset(cls, data) -> TwoSample:
        return cls(data.labeled, data.unlabeled)


def _need_two(s: TwoSample):
    if s.a.size < 2 or s.b.size < 2:
        raise InputError("variance-based tests need at least two observations per group")


def t_test(s: TwoSample, welch: bool = False):
    """Student t-test with pooled variance (Welch's version on request)."""
    _need_two(s)
    na, nb = s.a.size, s.b.size
    va, vb = s.a.var(ddof=1), s.b.var(ddof=1)
    diff = s.a.mean() - s.b.mean()
    if welch:
        se2 = va / na + vb / nb
        if not se2 > 0:
            raise UndefinedStatisticError("both groups have zero variance")
        df = se2**2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    else:
        df = na + nb - 2
        pooled = ((na - 1) * va + (nb - 1) * vb) / df
        if not pooled > 0:
            raise UndefinedStatisticError("pooled variance is zero")
        se2 = pooled * (1.0 / na + 1.0 / nb)
    t = diff / math.sqrt(se2)
    return float(t), float(min(1.0, 2.0 * stats.t.sf(abs(t), df)))


def f_test(s: TwoSample):
    """F-test of equal variances, ``F = var(a) / var(b)``."""
    _need_two(s)
    va, vb = s.a.var(ddof=1), s.b.var(ddof=1)
    if not (va > 0 and vb > 0):
        raise UndefinedStatisticError("F statistic needs positive variances in both groups")
    f = va / vb
    d1, d2 = s.a.size - 1, s.b.size - 1
    p = 2.0 * min(stats.f.cdf(f, d1, d2), stats.f.sf(f, d1, d2))
    return float(f), float(min(1.0, p))


def ks_test(s: TwoSample):
    """Kolmogorov-Smirnov distance with the asymptotic Kolmogorov p-value."""
    a, b = np.sort(s.a), np.sort(s.b)
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / a.size
    cdf_b = np.searchsorted(b, pooled, side="right") / b.size
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    en = a.size * b.size / (a.size + b.size)
    return d, float(special.kolmogorov(math.sqrt(en) * d))


def _exact_rank_sum_counts(doubled_ranks, k):
    """Number of size-k subsets per doubled-rank sum (subset-sum DP)."""
    total = int(doubled_ranks.sum())
    counts = np.zeros((k + 1, total + 1))
    counts[0, 0] = 1.0
    for r in doubled_ranks.astype(int):
        counts[1:, r:] += counts[:-1, : total + 1 - r].copy()
    return counts[k]


def mann_whitney(s: TwoSample):
    """Mann-Whitney U of group ``a`` on mid-ranks.

    Exact two-sided p-value by enumerating all group assignments when the
    pooled size is at most 20, otherwise the tie-corrected normal
    approximation.
    """
    na, nb = s.a.size, s.b.size
    n = na + nb
    ranks = stats.rankdata(np.concatenate([s.a, s.b]))
    u = float(ranks[:na].sum() - na * (na + 1) / 2.0)
    if n <= EXACT_MWU_MAX_N:
        doubled = np.rint(2 * ranks).astype(int)
        counts = _exact_rank_sum_counts(doubled, na)
        centre = na * (n + 1)  # twice the expected rank sum
        obs = abs(int(doubled[:na].sum()) - centre)
        sums = np.arange(counts.size)
        extreme = np.abs(sums - centre) >= obs
        return u, float(min(1.0, counts[extreme].sum() / counts.sum()))
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = np.sum(tie_counts**3 - tie_counts) / (n * (n - 1))
    var = na * nb / 12.0 * ((n + 1) - tie_term)
    if not var > 0:
        return u, 1.0
    z = (u - na * nb / 2.0) / math.sqrt(var)
    return u, float(min(1.0, 2.0 * stats.norm.sf(abs(z))))


TESTS = {
    "t": t_test,
    "f": f_test,
    "ks": ks_test,
    "mwu": mann_whitney,
}
