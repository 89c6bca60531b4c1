"""Component distributions: densities, weighted estimation, nuisance fits.

Three families are supported.  ``gaussian`` carries a variance penalty
that keeps the mixture likelihood bounded; ``nb`` is the negative
binomial in mean/dispersion form (variance ``m * (1 + phi * m)`` for the
offset-scaled mean ``m``); ``zinb`` adds a point mass at zero with weight
``zero_inflation``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize, special

from .errors import DegenerateVarianceError, DomainError, EstimationError, InputError

LOG_DISPERSION_BOUNDS = (-18.0, 18.0)
DISPERSION_CLAMP = (1e-8, 1e8)
SEARCH_XTOL = 1e-8
SEARCH_MAXITER = 200
MEAN_FLOOR = 1e-12
# Worth two pseudo-observations at the anchor variance in the M-step.
DEFAULT_PENALTY_WEIGHT = 1.0


class Family(str, enum.Enum):
    GAUSSIAN = "gaussian"
    NEGBIN = "nb"
    ZINB = "zinb"

    @property
    def is_count(self) -> bool:
        return self is not Family.GAUSSIAN


@dataclass(frozen=True)
class FamilySpec:
    """Distribution family plus its fixed nuisance parameters.

    Nuisance values left as ``None`` are resolved from the data when a
    mixture is fitted: the dispersion (and zero inflation) from the labelled
    observations, the penalty weight as :data:`DEFAULT_PENALTY_WEIGHT` and
    the variance anchor as the labelled MLE variance.
    """

    kind: Family = Family.GAUSSIAN
    dispersion: float | None = None
    zero_inflation: float | None = None
    penalty_weight: float | None = None
    variance_anchor: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Family(self.kind))
        if self.dispersion is not None and not self.dispersion > 0:
            raise InputError(f"dispersion must be positive, got {self.dispersion}")
        if self.zero_inflation is not None and not 0.0 <= self.zero_inflation <= 1.0:
            raise InputError(f"zero_inflation must lie in [0, 1], got {self.zero_inflation}")
        if self.penalty_weight is not None and not self.penalty_weight >= 0:
            raise InputError(f"penalty_weight must be non-negative, got {self.penalty_weight}")
        if self.variance_anchor is not None and not self.variance_anchor > 0:
            raise InputError(f"variance_anchor must be positive, got {self.variance_anchor}")

    @classmethod
    def gaussian(cls, penalty_weight=None, variance_anchor=None) -> FamilySpec:
        return cls(Family.GAUSSIAN, penalty_weight=penalty_weight, variance_anchor=variance_anchor)

    @classmethod
    def negbin(cls, dispersion=None) -> FamilySpec:
        return cls(Family.NEGBIN, dispersion=dispersion)

    @classmethod
    def zinb(cls, dispersion=None, zero_inflation=None) -> FamilySpec:
        return cls(Family.ZINB, dispersion=dispersion, zero_inflation=zero_inflation)

    @property
    def pi(self) -> float:
        """Zero-inflation weight actually used (0 outside the ZINB family)."""
        if self.kind is Family.ZINB:
            return 0.0 if self.zero_inflation is None else float(self.zero_inflation)
        return 0.0

    @property
    def resolved(self) -> bool:
        if self.kind is Family.NEGBIN:
            return self.dispersion is not None
        if self.kind is Family.ZINB:
            return self.dispersion is not None and self.zero_inflation is not None
        return True

    def with_nuisance(self, **changes) -> FamilySpec:
        return replace(self, **changes)


@dataclass(frozen=True)
class ParamSet:
    """Per-component parameters: a mean, and a variance for the Gaussian."""

    mean: float
    variance: float | None = None

    def as_tuple(self):
        return (self.mean, self.variance)


# ---------------------------------------------------------------------------
# validation helpers
# ---------------------------------------------------------------------------


def check_counts(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DomainError("counts must be finite")
    if np.any(y < 0) or np.any(y != np.floor(y)):
        raise DomainError("counts must be non-negative integers")
    return y


def check_offsets(offsets, n: int) -> np.ndarray:
    if offsets is None:
        return np.ones(n)
    o = np.asarray(offsets, dtype=float)
    if o.shape != (n,):
        raise InputError(f"expected {n} offsets, got shape {o.shape}")
    if not np.all(np.isfinite(o)) or np.any(o <= 0):
        raise DomainError("offsets must be finite and positive")
    return o


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------


def nb_log_constant(y, dispersion: float) -> np.ndarray:
    """Mean-free part of the NB log mass: log Gamma(y+r) - log Gamma(r) - log y!."""
    r = 1.0 / dispersion
    y = np.asarray(y, dtype=float)
    return special.gammaln(y + r) - special.gammaln(r) - special.gammaln(y + 1.0)


def nb_logpmf(y, mean, dispersion: float, offsets=1.0, const=None) -> np.ndarray:
    r = 1.0 / dispersion
    y = np.asarray(y, dtype=float)
    m = np.asarray(mean, dtype=float) * offsets
    if const is None:
        const = nb_log_constant(y, dispersion)
    return const + special.xlogy(y, m / (r + m)) - r * np.log1p(m / r)


def zinb_logpmf(y, mean, dispersion: float, pi: float, offsets=1.0, const=None) -> np.ndarray:
    lp = nb_logpmf(y, mean, dispersion, offsets, const)
    if pi <= 0.0:
        return lp
    if pi >= 1.0:
        return np.where(np.asarray(y) == 0, 0.0, -np.inf)
    y = np.asarray(y)
    with np.errstate(divide="ignore"):
        zero = np.log(pi + (1.0 - pi) * np.exp(lp))
    return np.where(y == 0, zero, math.log1p(-pi) + lp)


def gaussian_logpdf(y, mean: float, variance: float) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return -0.5 * (math.log(2.0 * math.pi * variance) + (y - mean) ** 2 / variance)


def log_density_array(family: FamilySpec, params: ParamSet, y, offsets=None) -> np.ndarray:
    """Vectorised log density of ``y`` under one component."""
    y = np.asarray(y, dtype=float)
    if family.kind is Family.GAUSSIAN:
        if params.variance is None or not params.variance > 0:
            raise DomainError("Gaussian component needs a positive variance")
        return gaussian_logpdf(y, params.mean, params.variance)
    if family.dispersion is None:
        raise InputError("count family needs a dispersion value")
    o = 1.0 if offsets is None else np.asarray(offsets, dtype=float)
    return zinb_logpmf(y, params.mean, family.dispersion, family.pi, o)


def log_density(family: FamilySpec, params: ParamSet, y: float, offset: float = 1.0) -> float:
    """Log density (Gaussian) or log mass (count families) of one observation."""
    if not (math.isfinite(y) and math.isfinite(offset) and math.isfinite(params.mean)):
        raise DomainError("non-finite input to log_density")
    if family.kind.is_count:
        if y < 0 or y != math.floor(y):
            raise DomainError(f"invalid count observation {y!r}")
        if not offset > 0:
            raise DomainError(f"offset must be positive, got {offset!r}")
        if not params.mean > 0:
            raise DomainError(f"count mean must be positive, got {params.mean!r}")
    return float(log_density_array(family, params, np.array([y]), np.array([offset]))[0])


def sample(family: FamilySpec, params: ParamSet, rng: np.random.Generator, size=None, offsets=None):
    """Draw observations from one component; ``offsets`` fixes the size."""
    if offsets is not None:
        offsets = np.asarray(offsets, dtype=float)
        size = offsets.shape
    if family.kind is Family.GAUSSIAN:
        return rng.normal(params.mean, math.sqrt(params.variance), size=size)
    m = params.mean * (1.0 if offsets is None else offsets)
    r = 1.0 / family.dispersion
    y = rng.negative_binomial(r, r / (r + m), size=size).astype(float)
    if family.kind is Family.ZINB and family.pi > 0:
        y = np.where(rng.random(size=np.shape(y)) < family.pi, 0.0, y)
    return y


# ---------------------------------------------------------------------------
# single-component estimation
# ---------------------------------------------------------------------------


def fit_single(family: FamilySpec, y, w=None, offsets=None) -> ParamSet:
    """Weighted estimate of one component's parameters.

    Gaussian: weighted mean, and the penalised variance
    ``(SS + 2 a s2) / (W + 2 a)`` which reduces to the weighted MLE when the
    penalty weight ``a`` is zero.  Count families: the weighted mean count per
    unit offset, divided by ``1 - pi`` under zero inflation.
    """
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    if w.shape != y.shape:
        raise InputError("weights and observations differ in length")
    if np.any(w < 0):
        raise InputError("weights must be non-negative")
    total = w.sum()
    if not total > 0:
        raise EstimationError("sum of weights is zero")

    if family.kind is Family.GAUSSIAN:
        mu = float(np.dot(w, y) / total)
        ss = float(np.dot(w, (y - mu) ** 2))
        a = family.penalty_weight or 0.0
        if a > 0:
            if family.variance_anchor is None:
                raise InputError("a penalised fit needs a variance anchor")
            var = (ss + 2.0 * a * family.variance_anchor) / (total + 2.0 * a)
        else:
            var = ss / total
        if not var > 0:
            raise DegenerateVarianceError("weighted variance is zero")
        return ParamSet(mu, var)

    o = check_offsets(offsets, y.size)
    pi = family.pi
    if pi >= 1.0:
        raise EstimationError("mean is unidentified when zero_inflation = 1")
    mu = float(np.dot(w, y) / np.dot(w, o)) / (1.0 - pi)
    return ParamSet(max(mu, MEAN_FLOOR))


# ---------------------------------------------------------------------------
# nuisance parameters
# ---------------------------------------------------------------------------


def _moment_mean(y, o, pi):
    return max(y.sum() / ((1.0 - pi) * o.sum()), MEAN_FLOOR)


def _count_loglik(y, o, mu, phi, pi):
    return float(np.sum(zinb_logpmf(y, mu, phi, pi, o)))


def _dispersion_search(y, o, pi):
    """Maximise the profile log-likelihood over log dispersion; returns (phi, loglik)."""
    mu = _moment_mean(y, o, pi)

    def neg(t):
        return -_count_loglik(y, o, mu, math.exp(t), pi)

    lo, hi = LOG_DISPERSION_BOUNDS
    res = optimize.minimize_scalar(
        neg, bounds=(lo, hi), method="bounded",
        options={"xatol": SEARCH_XTOL, "maxiter": SEARCH_MAXITER},
    )
    # bounded Brent never evaluates the end points themselves
    candidates = [(res.fun, float(res.x)), (neg(lo), lo), (neg(hi), hi)]
    _, t = min(candidates)
    if t == lo:
        phi = DISPERSION_CLAMP[0]
    elif t == hi:
        phi = DISPERSION_CLAMP[1]
    else:
        phi = float(np.clip(math.exp(t), *DISPERSION_CLAMP))
    return phi, _count_loglik(y, o, mu, phi, pi)


def estimate_dispersion(y, offsets=None, zero_inflation: float = 0.0) -> float:
    """Maximum-likelihood NB dispersion with the mean profiled out.

    Without zero inflation the likelihood is maximised at the Poisson limit
    whenever the data are not overdispersed, i.e. when the score at zero
    dispersion, ``sum((y - m)^2 - y)``, is non-positive; the lower clamp is
    returned directly in that case.
    """
    y = check_counts(y)
    if y.size < 2:
        raise EstimationError("need at least two observations to estimate a dispersion")
    o = check_offsets(offsets, y.size)
    pi = float(zero_inflation)
    if not 0.0 <= pi < 1.0:
        raise InputError(f"zero_inflation must lie in [0, 1), got {pi}")
    if pi == 0.0:
        m = _moment_mean(y, o, 0.0) * o
        if np.sum((y - m) ** 2 - y) <= 0:
            return DISPERSION_CLAMP[0]
    return _dispersion_search(y, o, pi)[0]


def estimate_zinb(y, offsets=None):
    """Joint ML estimate of (mean, dispersion, zero inflation).

    The zero inflation is searched on ``[0, fraction of zeros]``, the
    dispersion is profiled for every candidate, and the mean follows by
    moments.  Returns ``(mu, phi, pi)``.
    """
    y = check_counts(y)
    if y.size < 3:
        raise EstimationError("need at least three observations for a ZINB fit")
    if not np.any(y > 0):
        raise EstimationError("all observations are zero; the mean is unidentified")
    o = check_offsets(offsets, y.size)

    def profile(pi):
        if pi == 0.0:
            phi = estimate_dispersion(y, o)
            return phi, _count_loglik(y, o, _moment_mean(y, o, 0.0), phi, 0.0)
        return _dispersion_search(y, o, pi)

    phi0, ll0 = profile(0.0)
    p_zero = float(np.mean(y == 0))
    best = (ll0, 0.0, phi0)
    if p_zero > 0:
        res = optimize.minimize_scalar(
            lambda p: -profile(p)[1], bounds=(0.0, p_zero), method="bounded",
            options={"xatol": SEARCH_XTOL, "maxiter": SEARCH_MAXITER},
        )
        pi_hat = float(res.x)
        phi_hat, ll_hat = profile(pi_hat)
        if ll_hat > ll0:
            best = (ll_hat, pi_hat, phi_hat)
    _, pi_hat, phi_hat = best
    return _moment_mean(y, o, pi_hat), phi_hat, pi_hat
