"""Resampling calibration of the mixture likelihood-ratio test.

The observed statistic is compared against statistics recomputed on
resampled datasets: permutations of the group indicator (default) or a
parametric bootstrap from the null fit.  Resample ``k`` draws everything it
needs from its own stream ``default_rng([seed, 1, k])``, so results do not
depend on batch sizes or on the order in which resamples are evaluated.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .distributions import FamilySpec, ParamSet, sample
from .em import (
    Dataset,
    EmConfig,
    FitResult,
    fit_mixture,
    fit_null,
    lr_statistic,
    lr_statistics,
    resolve_family,
    restart_draws,
)
from .errors import InputError


class Method(str, enum.Enum):
    PERMUTATION = "perm"
    BOOTSTRAP = "boot"


class Status(str, enum.Enum):
    COMPLETED = "completed"
    EARLY_STOPPED = "early_stopped"
    FAILED = "failed"


@dataclass(frozen=True)
class TestConfig:
    """Resampling budget and early-stop rule.

    ``em.seed`` is ignored; all randomness derives from ``seed``.
    """

    __test__ = False

    b_max: int = 10_000
    batch: int = 1000
    exceedance_cap: int = 10
    method: Method = Method.PERMUTATION
    alpha_target: float = 0.05
    seed: int = 0
    em: EmConfig = field(default_factory=EmConfig)
    reestimate_nuisance: bool = False

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if self.b_max < 1 or self.batch < 1:
            raise InputError("b_max and batch must be positive")
        if self.batch > self.b_max:
            raise InputError(f"batch ({self.batch}) exceeds b_max ({self.b_max})")
        if self.exceedance_cap < 1:
            raise InputError("exceedance_cap must be at least 1")
        if not 0.0 < self.alpha_target < 1.0:
            raise InputError("alpha_target must lie in (0, 1)")


@dataclass
class TestResult:
    __test__ = False

    stat: float
    exceedances: int
    b_done: int
    pvalue: float
    status: Status
    fit: FitResult
    loglik0: float = float("nan")
    theta0: ParamSet = None
    family: FamilySpec = None


def p_value(exceedances: int, b_done: int) -> float:
    """Resampling p-value ``(exceedances + 1) / (b_done + 1)``."""
    if b_done < 1 or not 0 <= exceedances <= b_done:
        raise InputError(f"need 0 <= exceedances <= b_done and b_done >= 1, got {exceedances}, {b_done}")
    return (exceedances + 1) / (b_done + 1)


def early_stop_bound(exceedance_cap: int, b_max: int) -> float:
    """Smallest p-value a locus can still reach once it has been dropped."""
    return (exceedance_cap + 2) / (b_max + 1)


def resample_stream(seed, k: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1, k])


def _permuted_indicator(rng, n, u):
    x = np.zeros(n, dtype=bool)
    x[rng.permutation(n)[:u]] = True
    return x


def _resample_arrays(data, family, theta_a0, method, rng):
    if method is Method.PERMUTATION:
        return data.y, _permuted_indicator(rng, data.n, data.u)
    return sample(family, theta_a0, rng, offsets=data.offsets), data.x


def resample_null(data: Dataset, family: FamilySpec, theta_a0: ParamSet, method, rng) -> Dataset:
    """One resampled dataset under the null hypothesis.

    Permutation reassigns the unlabelled group to a uniformly random subset
    of the same size, keeping every (observation, offset) pair intact; the
    parametric bootstrap redraws every observation from the null fit.
    """
    y, x = _resample_arrays(data, family, theta_a0, Method(method), rng)
    return Dataset(y, x, data.offsets)


class Calibrator:
    """Incremental resampling state for one dataset.

    Used directly by the genome scan, which advances many of these in
    lock-step and drops the ones that can no longer become significant.
    """

    def __init__(self, data: Dataset, family: FamilySpec, cfg: TestConfig):
        self.data = data
        self.cfg = cfg
        self.family = resolve_family(data, family)
        em_cfg = EmConfig(cfg.em.tol, cfg.em.max_iter, cfg.em.restarts, seed=[cfg.seed, 0])
        self.fit = fit_mixture(data, self.family, em_cfg)
        self.theta0, self.loglik0 = fit_null(data, self.family)
        self.stat = lr_statistic(self.fit, self.loglik0)
        self.exceedances = 0
        self.b_done = 0
        self.status = None

    @property
    def b_max(self) -> int:
        return self.cfg.b_max

    @property
    def finished(self) -> bool:
        return self.status is not None

    def _draw(self, k):
        rng = resample_stream(self.cfg.seed, k)
        y, x = _resample_arrays(self.data, self.family, self.theta0, self.cfg.method, rng)
        return y, x, restart_draws(rng, self.cfg.em.restarts, self.data.u)

    def resample_stats(self, start: int, count: int) -> np.ndarray:
        """Statistics of resamples ``start .. start + count - 1``."""
        data, cfg = self.data, self.cfg
        drawn = [self._draw(k) for k in range(start, start + count)]
        if cfg.reestimate_nuisance and self.family.kind.is_count:
            out = np.empty(count)
            unresolved = FamilySpec(self.family.kind)
            for j, (y, x, u) in enumerate(drawn):
                fam = resolve_family(Dataset(y, x, data.offsets), unresolved)
                s, _ = lr_statistics(y[None], x[None], fam, cfg.em, u[None], data.offsets[None])
                out[j] = s[0]
            return out
        family = self.family
        Y = np.stack([y for y, _, _ in drawn])
        X = np.stack([x for _, x, _ in drawn])
        U = np.stack([u for _, _, u in drawn])
        O = np.broadcast_to(data.offsets, Y.shape)
        stats, _ = lr_statistics(Y, X, family, cfg.em, U, O)
        return stats

    def advance(self, count: int) -> None:
        count = min(count, self.cfg.b_max - self.b_done)
        if count <= 0 or self.finished:
            return
        stats = self.resample_stats(self.b_done, count)
        # a failed refit counts against the observed statistic
        self.exceedances += int(np.sum(~(stats < self.stat)))
        self.b_done += count
        if self.b_done >= self.cfg.b_max:
            self.status = Status.COMPLETED
        elif self.exceedances > self.cfg.exceedance_cap:
            self.status = Status.EARLY_STOPPED

    def result(self) -> TestResult:
        return TestResult(
            stat=self.stat,
            exceedances=self.exceedances,
            b_done=self.b_done,
            pvalue=p_value(self.exceedances, self.b_done),
            status=self.status,
            fit=self.fit,
            loglik0=self.loglik0,
            theta0=self.theta0,
            family=self.family,
        )


def mixture_test(data: Dataset, family: FamilySpec, cfg: TestConfig = TestConfig()) -> TestResult:
    """Test H0: tau = 0 against tau > 0 by resampling.

    Resamples are drawn in batches of ``cfg.batch``; after each batch the
    test stops early once more than ``cfg.exceedance_cap`` resampled
    statistics reached the observed one.
    """
    cal = Calibrator(data, family, cfg)
    while not cal.finished:
        cal.advance(cfg.batch)
    return cal.result()
