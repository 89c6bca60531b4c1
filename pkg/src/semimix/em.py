"""Semi-supervised two-component mixture: EM fit, null fit, LR statistic.

Labelled observations (``x == False``) belong to class A; unlabelled ones
(``x == True``) belong to class B with probability ``tau``.  The fused
iteration runs in :mod:`semimix.kernels`; :func:`e_step` and :func:`m_step`
expose single steps for inspection and testing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .distributions import (
    DEFAULT_PENALTY_WEIGHT,
    Family,
    FamilySpec,
    ParamSet,
    check_counts,
    check_offsets,
    estimate_dispersion,
    estimate_zinb,
    fit_single,
    log_density_array,
    nb_log_constant,
)
from .errors import DegenerateVarianceError, InputError, NumericalError


@dataclass(frozen=True)
class Dataset:
    """Observations ``y``, group indicator ``x`` (True = unlabelled), offsets."""

    y: np.ndarray
    x: np.ndarray
    offsets: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=bool)
        if y.ndim != 1 or x.shape != y.shape:
            raise InputError(f"y and x must be vectors of equal length, got {y.shape} and {x.shape}")
        if not np.all(np.isfinite(y)):
            raise InputError("observations must be finite")
        o = check_offsets(self.offsets, y.size)
        n, u = y.size, int(x.sum())
        if n < 4:
            raise InputError(f"need at least 4 observations, got {n}")
        if not 2 <= u <= n - 2:
            raise InputError(f"number of unlabelled observations must lie in [2, {n - 2}], got {u}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "offsets", o)

    @classmethod
    def from_groups(cls, labeled, unlabeled, offsets=None) -> Dataset:
        labeled = np.asarray(labeled, dtype=float)
        unlabeled = np.asarray(unlabeled, dtype=float)
        y = np.concatenate([labeled, unlabeled])
        x = np.concatenate([np.zeros(labeled.size, bool), np.ones(unlabeled.size, bool)])
        return cls(y, x, offsets)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def u(self) -> int:
        return int(self.x.sum())

    @property
    def s(self) -> int:
        return self.n - self.u

    @property
    def labeled(self) -> np.ndarray:
        return self.y[~self.x]

    @property
    def unlabeled(self) -> np.ndarray:
        return self.y[self.x]


@dataclass(frozen=True)
class EmConfig:
    tol: float = 1e-8
    max_iter: int = 500
    restarts: int = 4
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise InputError("tol must be positive")
        if self.max_iter < 1:
            raise InputError("max_iter must be at least 1")
        if self.restarts < 0:
            raise InputError("restarts must be non-negative")


@dataclass
class FitResult:
    theta_a: ParamSet
    theta_b: ParamSet
    tau: float
    loglik: float
    penalized_loglik: float
    memberships_b: np.ndarray
    iterations: int
    converged: bool
    start: int = 0
    trace: np.ndarray = field(default=None, repr=False)

    @property
    def memberships_a(self) -> np.ndarray:
        return 1.0 - self.memberships_b


# ---------------------------------------------------------------------------
# nuisance resolution
# ---------------------------------------------------------------------------


def resolve_family(data: Dataset, family: FamilySpec) -> FamilySpec:
    """Fill in nuisance parameters that were left unspecified.

    Count families get the dispersion (and zero inflation) estimated from
    the labelled observations.  The Gaussian penalty weight defaults to
    ``DEFAULT_PENALTY_WEIGHT``; the variance anchor is left unset and
    derived per dataset.
    """
    if family.kind is Family.GAUSSIAN:
        if family.penalty_weight is None:
            return family.with_nuisance(penalty_weight=DEFAULT_PENALTY_WEIGHT)
        return family
    y_lab = check_counts(data.labeled)
    check_counts(data.y)
    o_lab = data.offsets[~data.x]
    if family.kind is Family.NEGBIN:
        if family.dispersion is None:
            return family.with_nuisance(dispersion=estimate_dispersion(y_lab, o_lab))
        return family
    if family.dispersion is None and family.zero_inflation is None:
        _, phi, pi = estimate_zinb(y_lab, o_lab)
        return family.with_nuisance(dispersion=phi, zero_inflation=pi)
    if family.dispersion is None:
        phi = estimate_dispersion(y_lab, o_lab, zero_inflation=family.zero_inflation)
        return family.with_nuisance(dispersion=phi)
    if family.zero_inflation is None:
        return family.with_nuisance(zero_inflation=0.0)
    return family


def gaussian_anchor(data: Dataset, family: FamilySpec) -> float:
    """Variance anchor of the penalty: labelled MLE variance unless fixed."""
    if family.variance_anchor is not None:
        return float(family.variance_anchor)
    lab = data.labeled
    anchor = float(np.mean((lab - lab.mean()) ** 2))
    if anchor > 0:
        return anchor
    # constant labelled group: fall back to the pooled variance
    return float(np.mean((data.y - data.y.mean()) ** 2))


def penalized_family(data: Dataset, family: FamilySpec) -> FamilySpec:
    """:func:`resolve_family` plus the Gaussian variance anchor of ``data``."""
    family = resolve_family(data, family)
    if family.kind is Family.GAUSSIAN and family.variance_anchor is None and family.penalty_weight > 0:
        anchor = gaussian_anchor(data, family)
        if anchor > 0:
            family = family.with_nuisance(variance_anchor=anchor)
    return family


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------


def e_step(data: Dataset, family: FamilySpec, theta_a: ParamSet, theta_b: ParamSet, tau: float):
    """Class-B posteriors and the observed-data log-likelihood at the given parameters."""
    if not 0.0 <= tau <= 1.0:
        raise InputError(f"tau must lie in [0, 1], got {tau}")
    la = log_density_array(family, theta_a, data.y, data.offsets)
    lb = log_density_array(family, theta_b, data.y, data.offsets)
    x = data.x
    b = np.zeros(data.n)
    if tau == 0.0:
        return b, float(la.sum())
    if tau == 1.0:
        b[x] = 1.0
        return b, float(la[~x].sum() + lb[x].sum())
    both_zero = x & np.isneginf(la) & np.isneginf(lb)
    if np.any(both_zero):
        idx = int(np.flatnonzero(both_zero)[0])
        raise NumericalError(f"both component densities are zero at observation {idx}", index=idx)
    wa = np.log1p(-tau) + la[x]
    wb = np.log(tau) + lb[x]
    mix = np.logaddexp(wa, wb)
    b[x] = np.exp(wb - mix)
    return b, float(la[~x].sum() + mix.sum())


def m_step(data: Dataset, family: FamilySpec, memberships_b):
    """Closed-form parameter update given class-B posteriors."""
    b = np.asarray(memberships_b, dtype=float)
    if b.shape != (data.n,):
        raise InputError("memberships must have one entry per observation")
    if np.any(b[~data.x] != 0.0) or np.any((b < 0) | (b > 1)):
        raise InputError("memberships must lie in [0, 1] and be zero for labelled observations")
    theta_a = fit_single(family, data.y, 1.0 - b, data.offsets)
    wb = b.sum()
    if wb <= 0:
        return theta_a, theta_a, 0.0
    theta_b = fit_single(family, data.y, b, data.offsets)
    return theta_a, theta_b, float(wb / data.u)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


def restart_draws(rng: np.random.Generator, restarts: int, u: int) -> np.ndarray:
    """Initial soft assignments of the random restarts, shape (restarts, u)."""
    return rng.random((restarts, u))


def fit_null(data: Dataset, family: FamilySpec):
    """Single-component fit to all observations; returns (theta, loglik0)."""
    family = resolve_family(data, family)
    if family.kind is Family.GAUSSIAN:
        family = FamilySpec.gaussian(penalty_weight=0.0)
    theta = fit_single(family, data.y, None, data.offsets)
    ll0 = float(log_density_array(family, theta, data.y, data.offsets).sum())
    return theta, ll0


def _run_kernel(data: Dataset, family: FamilySpec, init: np.ndarray, cfg: EmConfig, consts):
    x = data.x
    u = data.u
    b_out = np.empty(u)
    trace = np.empty(cfg.max_iter + 1)
    if family.kind is Family.GAUSSIAN:
        res = kernels.em_gaussian(
            data.y[~x], data.y[x], float(family.penalty_weight),
            float(family.variance_anchor or 1.0), init, cfg.tol, cfg.max_iter, b_out, trace,
        )
    else:
        o = data.offsets
        res = kernels.em_count(
            data.y[~x], o[~x], consts[~x], data.y[x], o[x], consts[x],
            1.0 / family.dispersion, family.pi, init, cfg.tol, cfg.max_iter, b_out, trace,
        )
    return res, b_out, trace[: res[7] + 1].copy()


def fit_mixture(data: Dataset, family: FamilySpec, cfg: EmConfig = EmConfig()) -> FitResult:
    """Maximise the semi-supervised mixture likelihood by EM.

    One deterministic start (labelled moments for class A, unlabelled
    moments for class B, ``tau = 0.5``) plus ``cfg.restarts`` starts from
    uniform random soft assignments drawn from ``cfg.seed``.  The start with
    the highest penalised log-likelihood wins; ties go to the earlier start.
    """
    family = penalized_family(data, family)
    consts = nb_log_constant(data.y, family.dispersion) if family.kind.is_count else None
    draws = restart_draws(np.random.default_rng(cfg.seed), cfg.restarts, data.u)
    best = None
    failures = []
    for start in range(cfg.restarts + 1):
        init = np.empty(0) if start == 0 else draws[start - 1]
        res, b_unl, trace = _run_kernel(data, family, init, cfg, consts)
        if res[9] != 0:
            failures.append(res[9])
            continue
        if best is None or res[6] > best[0][6]:
            best = (res, b_unl, trace, start)
    if best is None:
        if 1 in failures:
            raise DegenerateVarianceError("every EM start collapsed to a zero variance")
        raise NumericalError("every EM start hit vanishing component densities")
    res, b_unl, trace, start = best
    mu_a, var_a, mu_b, var_b, tau, ll, pll, iters, converged, _ = res
    gauss = family.kind is Family.GAUSSIAN
    b = np.zeros(data.n)
    b[data.x] = b_unl
    return FitResult(
        theta_a=ParamSet(float(mu_a), float(var_a) if gauss else None),
        theta_b=ParamSet(float(mu_b), float(var_b) if gauss else None),
        tau=float(tau),
        loglik=float(ll),
        penalized_loglik=float(pll),
        memberships_b=b,
        iterations=int(iters),
        converged=bool(converged),
        start=start,
        trace=trace,
    )


def lr_statistic(fit1: FitResult, loglik0: float) -> float:
    """Likelihood-ratio statistic, clamped at zero (the null is nested at tau = 0)."""
    return max(0.0, 2.0 * (fit1.loglik - loglik0))


def lr_statistics(Y, X, family: FamilySpec, cfg: EmConfig, U, O=None):
    """LR statistics for a stack of datasets sharing a resolved family.

    ``Y``, ``X`` (and ``O``) are ``(rows, n)`` arrays; ``U`` holds restart
    draws of shape ``(rows, restarts, u)``.  Returns ``(stats, status)``.
    """
    Y = np.ascontiguousarray(Y, dtype=float)
    X = np.ascontiguousarray(X, dtype=np.bool_)
    U = np.ascontiguousarray(U, dtype=float)
    if family.kind is Family.GAUSSIAN:
        pen = family.penalty_weight
        if pen is None:
            pen = DEFAULT_PENALTY_WEIGHT
        anchor = family.variance_anchor or 0.0
        return kernels.lr_batch_gaussian(Y, X, U, float(pen), float(anchor), cfg.tol, cfg.max_iter)
    O = np.ones_like(Y) if O is None else np.ascontiguousarray(O, dtype=float)
    C = nb_log_constant(Y, family.dispersion)
    return kernels.lr_batch_count(
        Y, O, C, X, U, 1.0 / family.dispersion, family.pi, cfg.tol, cfg.max_iter
    )
