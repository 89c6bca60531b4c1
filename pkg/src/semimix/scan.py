"""Genome-scale scan with a shared-budget early-stopping scheduler.

Every eligible locus gets its own :class:`~semimix.mixtest.Calibrator`.
All active loci advance by one batch of resamples at a time; after each
batch, loci with more than ``exceedance_cap`` exceedances are dropped.
Loci are independent tasks with their own random streams, so the output
does not depend on the number of workers.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy import stats

from .distributions import Family, FamilySpec
from .em import Dataset
from .errors import InputError, SemimixError
from .mixtest import Calibrator, Status, TestConfig, early_stop_bound

LOCUS_COLUMNS = ["id", "chrom", "pos", "group"]


class Binarization(str, enum.Enum):
    ZERO_VS_REST = "zero-vs-rest"
    TWO_VS_REST = "two-vs-rest"


class Adjustment(str, enum.Enum):
    BONFERRONI = "bonferroni"
    PER_GROUP = "per-group"


class CapMode(str, enum.Enum):
    FIXED = "fixed"
    THRESHOLD = "threshold"


@dataclass
class GenotypeMatrix:
    """Minor-allele counts (0, 1, 2 or NaN for missing), loci x individuals."""

    loci: pd.DataFrame
    calls: np.ndarray
    individuals: list = None

    def __post_init__(self):
        calls = np.asarray(self.calls, dtype=float)
        if calls.ndim != 2 or calls.shape[0] != len(self.loci):
            raise InputError(f"calls must be a loci x individuals matrix, got {calls.shape} for {len(self.loci)} loci")
        observed = calls[~np.isnan(calls)]
        if not np.all(np.isin(observed, (0.0, 1.0, 2.0))):
            raise InputError("genotype calls must be 0, 1, 2 or missing")
        loci = self.loci.reset_index(drop=True).copy()
        for col in LOCUS_COLUMNS:
            if col not in loci:
                loci[col] = None if col == "group" else ""
        if self.individuals is None:
            self.individuals = [f"ind{i}" for i in range(calls.shape[1])]
        if len(self.individuals) != calls.shape[1]:
            raise InputError("number of individual ids does not match the calls")
        self.loci = loci
        self.calls = calls

    @property
    def n_loci(self) -> int:
        return self.calls.shape[0]

    @property
    def n_individuals(self) -> int:
        return self.calls.shape[1]


@dataclass(frozen=True)
class ScanConfig:
    binarization: Binarization = Binarization.ZERO_VS_REST
    min_group: int = 50
    maf_min: float = 0.0
    drop_missing: bool = True
    alpha: float = 0.05
    adjustment: Adjustment = Adjustment.BONFERRONI
    test: TestConfig = field(default_factory=lambda: TestConfig(b_max=1_000_000, batch=1000))
    workers: int = 1
    seed_base: int = 0
    cap_mode: CapMode = CapMode.FIXED
    auto_b_max: bool = False

    def __post_init__(self):
        for name, kind in (("binarization", Binarization), ("adjustment", Adjustment), ("cap_mode", CapMode)):
            object.__setattr__(self, name, kind(getattr(self, name)))
        if self.min_group < 2:
            raise InputError("min_group must be at least 2")
        if not 0.0 <= self.maf_min <= 0.5:
            raise InputError("maf_min must lie in [0, 0.5]")
        if not 0.0 < self.alpha < 1.0:
            raise InputError("alpha must lie in (0, 1)")
        if self.workers < 1:
            raise InputError("workers must be positive")


def binarize(locus_calls, rule=Binarization.ZERO_VS_REST) -> np.ndarray:
    """Group indicator of one locus; True marks the unlabelled group."""
    g = np.asarray(locus_calls, dtype=float)
    if np.any(np.isnan(g)):
        raise InputError("locus has missing calls")
    if not np.all(np.isin(g, (0.0, 1.0, 2.0))):
        raise InputError("genotype calls must be 0, 1 or 2")
    if Binarization(rule) is Binarization.ZERO_VS_REST:
        return g > 0
    return g == 2


def filter_loci(gm: GenotypeMatrix, cfg: ScanConfig):
    """Eligible locus indices plus a table of exclusions with reasons."""
    keep, excluded = [], []
    for i in range(gm.n_loci):
        g = gm.calls[i]
        missing = np.isnan(g)
        reason = None
        if missing.all() or (missing.any() and cfg.drop_missing):
            reason = "missing"
        else:
            obs = g[~missing]
            freq = obs.mean() / 2.0
            maf = min(freq, 1.0 - freq)
            x = binarize(obs, cfg.binarization)
            if maf < cfg.maf_min:
                reason = "maf"
            elif min(x.sum(), (~x).sum()) < cfg.min_group:
                reason = "group size"
        if reason is None:
            keep.append(i)
        else:
            excluded.append({"id": gm.loci.at[i, "id"], "index": i, "reason": reason})
    return keep, pd.DataFrame(excluded, columns=["id", "index", "reason"])


def adjust_pvalues(pvals, group_sizes, mode=Adjustment.BONFERRONI) -> np.ndarray:
    """Bonferroni-style ``min(1, p * m)``.

    ``group_sizes`` is the global number of tests (scalar) or, per locus,
    the size of its adjustment group.
    """
    p = np.asarray(pvals, dtype=float)
    m = np.broadcast_to(np.asarray(group_sizes, dtype=float), p.shape)
    if Adjustment(mode) is Adjustment.BONFERRONI and np.ndim(group_sizes) > 0 and len(set(np.ravel(group_sizes))) > 1:
        raise InputError("global Bonferroni needs a single test count")
    return np.minimum(1.0, p * m)


def chi2_independence_2x2(table):
    """Pearson chi-squared test of independence without continuity correction."""
    t = np.asarray(table, dtype=float)
    if t.shape != (2, 2) or np.any(t < 0):
        raise InputError("expected a 2x2 table of non-negative counts")
    rows, cols, total = t.sum(axis=1), t.sum(axis=0), t.sum()
    if np.any(rows == 0) or np.any(cols == 0):
        raise InputError("2x2 table has a zero marginal")
    expected = np.outer(rows, cols) / total
    stat = float(np.sum((t - expected) ** 2 / expected))
    return stat, float(stats.chi2.sf(stat, 1))


def locus_seed(seed_base: int, index: int) -> int:
    return int(np.random.SeedSequence([seed_base, index]).generate_state(1, np.uint64)[0])


def threshold_cap(alpha_adjusted: float, b_max: int) -> int:
    """Smallest cap whose dropped loci cannot reach ``alpha_adjusted``."""
    return max(1, math.floor(alpha_adjusted * (b_max + 1)) - 1)


@dataclass
class ScanResult:
    table: pd.DataFrame
    memberships: pd.DataFrame
    excluded: pd.DataFrame
    active_history: list = field(default_factory=list)


def _group_sizes(loci: pd.DataFrame, eligible: Sequence[int], mode: Adjustment) -> dict:
    if mode is Adjustment.BONFERRONI:
        return {i: len(eligible) for i in eligible}
    groups = [loci.at[i, "group"] for i in eligible]
    keys = ["\0" + str(i) if g is None or (isinstance(g, float) and math.isnan(g)) else str(g)
            for i, g in zip(eligible, groups)]
    counts = pd.Series(keys).value_counts().to_dict()
    return {i: counts[k] for i, k in zip(eligible, keys)}


def _map(fn, items, workers):
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


RESULT_COLUMNS = [
    "id", "chrom", "pos", "group", "stat", "exceedances", "b_done", "b_max", "pvalue",
    "pvalue_adjusted", "p_lower_bound", "status", "tau_hat", "mu_a", "var_a", "mu_b", "var_b",
    "dispersion", "zero_inflation", "reason",
]


def scan(traits, gm: GenotypeMatrix, family: FamilySpec, cfg: ScanConfig, offsets=None) -> ScanResult:
    """Mixture test of every eligible locus under the active-set schedule."""
    traits = np.asarray(traits, dtype=float)
    if traits.shape != (gm.n_individuals,):
        raise InputError(f"expected {gm.n_individuals} trait values, got {traits.shape}")
    if offsets is not None:
        offsets = np.asarray(offsets, dtype=float)
    eligible, excluded = filter_loci(gm, cfg)
    sizes = _group_sizes(gm.loci, eligible, cfg.adjustment)

    def locus_config(i):
        m = sizes[i]
        b_max = max(cfg.test.b_max, math.ceil(m / cfg.alpha)) if cfg.auto_b_max else cfg.test.b_max
        cap = threshold_cap(cfg.alpha / m, b_max) if cfg.cap_mode is CapMode.THRESHOLD else cfg.test.exceedance_cap
        return replace(cfg.test, b_max=b_max, batch=min(cfg.test.batch, b_max), exceedance_cap=cap,
                       seed=locus_seed(cfg.seed_base, i))

    def start(i):
        try:
            x = binarize(gm.calls[i], cfg.binarization)
            return i, Calibrator(Dataset(traits, x, offsets), family, locus_config(i)), None
        except SemimixError as exc:
            return i, None, f"{exc.kind}: {exc}"

    started = _map(start, eligible, cfg.workers)
    active = [c for _, c, _ in started if c is not None]
    history = [len(active)]
    while active:
        _map(lambda c: c.advance(c.cfg.batch), active, cfg.workers)
        active = [c for c in active if not c.finished]
        history.append(len(active))

    rows, members = [], np.full((len(started), gm.n_individuals), np.nan)
    for j, (i, cal, reason) in enumerate(started):
        locus = gm.loci.loc[i]
        row = {"id": locus["id"], "chrom": locus["chrom"], "pos": locus["pos"], "group": locus["group"]}
        if cal is None:
            row.update(status=Status.FAILED.value, reason=reason)
            rows.append(row)
            continue
        res = cal.result()
        fit = res.fit
        gauss = res.family.kind is Family.GAUSSIAN
        row.update(
            stat=res.stat, exceedances=res.exceedances, b_done=res.b_done, b_max=cal.cfg.b_max,
            pvalue=res.pvalue,
            p_lower_bound=early_stop_bound(cal.cfg.exceedance_cap, cal.cfg.b_max)
            if res.status is Status.EARLY_STOPPED else res.pvalue,
            status=res.status.value, tau_hat=fit.tau, mu_a=fit.theta_a.mean, mu_b=fit.theta_b.mean,
            var_a=fit.theta_a.variance if gauss else None, var_b=fit.theta_b.variance if gauss else None,
            dispersion=res.family.dispersion, zero_inflation=res.family.zero_inflation, reason="",
        )
        rows.append(row)
        members[j] = fit.memberships_b

    table = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    if len(table):
        m = np.array([sizes[i] for i, _, _ in started], dtype=float)
        table["pvalue_adjusted"] = adjust_pvalues(table["pvalue"].to_numpy(float), m, Adjustment.PER_GROUP)
    memberships = pd.DataFrame(members, index=[gm.loci.at[i, "id"] for i, _, _ in started],
                               columns=list(gm.individuals))
    return ScanResult(table, memberships, excluded, history)
