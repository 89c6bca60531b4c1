"""Simulation harness: data-generating process and experiment runners.

Datasets are built in three steps: the first ``n - d`` observations are
class A and the last ``d`` class B; each observation is drawn from its
class distribution; the last ``u`` observations lose their label.

Replicate ``r`` of an experiment with seed ``s`` uses the stream
``default_rng([s, r])`` for both its data and its resampling seed, so
results do not depend on execution order or worker count.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .classical import TESTS, TwoSample
from .distributions import FamilySpec, ParamSet, sample
from .em import Dataset, EmConfig
from .errors import InputError, SemimixError
from .mixtest import TestConfig, mixture_test

DEFAULT_PERMUTATIONS = 100
# Simulation studies fit from the deterministic moment start only; random
# restarts multiply the cost without changing power measurably.
SIM_RESTARTS = 0


@dataclass(frozen=True)
class DgpSpec:
    """Recipe for one simulated dataset.

    ``family`` carries the generating nuisance parameters (dispersion and
    zero inflation for count data).  With ``t_df`` set, observations are
    ``mean + sqrt(variance) * T`` for a Student t variable ``T``.
    """

    n: int
    d: int
    u: int
    theta_a: ParamSet = ParamSet(0.0, 1.0)
    theta_b: ParamSet = ParamSet(0.0, 1.0)
    family: FamilySpec = FamilySpec()
    t_df: float | None = None

    def __post_init__(self):
        if not 0 <= self.d <= self.n - 2:
            raise InputError(f"d must lie in [0, {self.n - 2}], got {self.d}")
        if not max(self.d, 2) <= self.u <= self.n - 2:
            raise InputError(f"u must lie in [{max(self.d, 2)}, {self.n - 2}], got {self.u}")
        if self.t_df is not None and not self.t_df > 0:
            raise InputError("t_df must be positive")

    @property
    def tau(self) -> float:
        return self.d / self.u


def _draw_class(spec: DgpSpec, theta: ParamSet, size: int, rng):
    if size == 0:
        return np.empty(0)
    if spec.t_df is not None:
        return theta.mean + math.sqrt(theta.variance) * rng.standard_t(spec.t_df, size=size)
    return sample(spec.family, theta, rng, size=size)


def generate(spec: DgpSpec, rng: np.random.Generator):
    """Simulate one dataset; returns ``(Dataset, z)`` with ``z`` True for class B."""
    n, d, u = spec.n, spec.d, spec.u
    z = np.zeros(n, dtype=bool)
    z[n - d:] = True
    y = np.concatenate([_draw_class(spec, spec.theta_a, n - d, rng), _draw_class(spec, spec.theta_b, d, rng)])
    x = np.zeros(n, dtype=bool)
    x[n - u:] = True
    return Dataset(y, x), z


def sim_test_config(permutations: int = DEFAULT_PERMUTATIONS, em: EmConfig = None) -> TestConfig:
    """Resampling settings of the simulation studies: no early stopping."""
    return TestConfig(
        b_max=permutations, batch=permutations, exceedance_cap=permutations,
        em=em if em is not None else EmConfig(restarts=SIM_RESTARTS),
    )


def _replicate_seed(rng) -> int:
    return int(rng.integers(2**63))


def run_replicate(spec: DgpSpec, fit_family: FamilySpec, tests: Sequence[str], test_cfg: TestConfig, seed, r: int):
    """p-values of every requested test on replicate ``r``.

    ``"mixture"`` names the mixture test; other names index
    :data:`semimix.classical.TESTS`.  A test that cannot be computed on the
    replicate yields ``nan``.
    """
    rng = np.random.default_rng([seed, r])
    data, _ = generate(spec, rng)
    cfg = replace(test_cfg, seed=_replicate_seed(rng))
    out = {}
    for name in tests:
        try:
            if name == "mixture":
                out[name] = mixture_test(data, fit_family, cfg).pvalue
            else:
                out[name] = TESTS[name](TwoSample.from_dataset(data))[1]
        except SemimixError:
            out[name] = float("nan")
    return out


def _run_all(spec, fit_family, tests, test_cfg, seed, reps, workers):
    def one(r):
        return run_replicate(spec, fit_family, tests, test_cfg, seed, r)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(one, range(reps)))
    else:
        rows = [one(r) for r in range(reps)]
    return {name: np.array([row[name] for row in rows]) for name in tests}


def rejection_rate(pvalues, alpha: float) -> float:
    p = np.asarray(pvalues, dtype=float)
    p = p[np.isfinite(p)]
    return float(np.mean(p <= alpha)) if p.size else float("nan")


def power_curve(
    spec: DgpSpec,
    tests: Sequence[str],
    reps: int,
    alpha_grid: Sequence[float] = (0.05,),
    seed=0,
    fit_family: FamilySpec = None,
    test_cfg: TestConfig = None,
    workers: int = 1,
):
    """Rejection fraction of every test at every significance level.

    Returns ``(rows, pvalues)``: one dict per alpha with a rate per test,
    and the raw p-values per test.
    """
    fit_family = fit_family or FamilySpec(spec.family.kind, spec.family.dispersion, spec.family.zero_inflation)
    test_cfg = test_cfg or sim_test_config()
    pvals = _run_all(spec, fit_family, list(tests), test_cfg, seed, reps, workers)
    rows = [{"alpha": a, **{t: rejection_rate(pvals[t], a) for t in tests}} for a in alpha_grid]
    return rows, pvals


def power_grid(
    base: DgpSpec,
    cells: Sequence[tuple],
    comparator: str,
    reps: int,
    alpha: float = 0.05,
    seed=0,
    fit_family: FamilySpec = None,
    test_cfg: TestConfig = None,
    workers: int = 1,
):
    """Mixture test against one classical test over a grid of ``(u, d)`` cells.

    Per cell: the median ratio of mixture to classical p-values, the share
    of replicates where the mixture p-value is lower, and both rejection
    rates at ``alpha``.
    """
    rows = []
    for i, (u, d) in enumerate(cells):
        spec = replace(base, u=int(u), d=int(d))
        _, p = power_curve(spec, ["mixture", comparator], reps, (alpha,), [seed, i], fit_family, test_cfg, workers)
        pm, pc = p["mixture"], p[comparator]
        ok = np.isfinite(pm) & np.isfinite(pc)
        rows.append({
            "u": int(u),
            "d": int(d),
            "tau": spec.tau,
            "ratio": float(np.median(pm[ok] / pc[ok])) if ok.any() else float("nan"),
            "mixture_lower": float(np.mean(pm[ok] < pc[ok])) if ok.any() else float("nan"),
            "power_mixture": rejection_rate(pm, alpha),
            f"power_{comparator}": rejection_rate(pc, alpha),
        })
    return rows


class FprDesign(str, enum.Enum):
    UNLABELED_FRACTION = "unlabeled-fraction"
    T_DEGREES = "t-df"
    NB_DISPERSION = "nb-dispersion"
    ZINB_MISSPEC = "zinb-misspec"


def _null_points(design: FprDesign, params: dict):
    """Design points as ``(label, [(spec, fit_family), ...])`` cycled over replicates."""
    if design is FprDesign.UNLABELED_FRACTION:
        n = params.get("n", 100)
        for pct in params.get("percentages", range(5, 100, 10)):
            u = round(n * pct / 100)
            yield pct, [(DgpSpec(n, 0, u), FamilySpec.gaussian())]
    elif design is FprDesign.T_DEGREES:
        s, u = params.get("labeled", 50), params.get("unlabeled", 50)
        for nu in params.get("df", range(1, 11)):
            yield nu, [(DgpSpec(s + u, 0, u, t_df=nu), FamilySpec.gaussian())]
    elif design is FprDesign.NB_DISPERSION:
        n = params.get("n", 100)
        mu, phi = params.get("mean", 10.0), params.get("dispersion", 0.2)
        pcts = params.get("percentages", range(5, 100, 5))
        for phi_hat in params.get("dispersion_hats", (0.2, 0.3, 0.1)):
            yield phi_hat, [
                (DgpSpec(n, 0, round(n * p / 100), ParamSet(mu), ParamSet(mu), FamilySpec.negbin(phi)),
                 FamilySpec.negbin(phi_hat))
                for p in pcts
            ]
    elif design is FprDesign.ZINB_MISSPEC:
        mu, phi, pi = params.get("mean", 10.0), params.get("dispersion", 0.2), params.get("zero_inflation", 0.2)
        pcts = params.get("percentages", range(5, 100, 5))
        truth = FamilySpec.zinb(phi, pi)
        settings = params.get("settings", ("known", "pi=0.4", "pi=0", "mle"))
        for label in settings:
            n = params.get("mle_n", 1000) if label == "mle" else params.get("n", 100)
            if label == "known":
                fit = FamilySpec.zinb(phi, pi)
            elif label == "mle":
                fit = FamilySpec.zinb()
            else:
                fit = FamilySpec.zinb(phi, float(label.split("=")[1]))
            yield label, [
                (DgpSpec(n, 0, round(n * p / 100), ParamSet(mu), ParamSet(mu), truth), fit)
                for p in pcts
            ]
    else:  # pragma: no cover
        raise InputError(f"unknown design {design}")


def fpr_study(
    design,
    params: dict | None = None,
    reps: int = 1000,
    alpha: float = 0.05,
    seed=0,
    test_cfg: TestConfig = None,
    workers: int = 1,
):
    """Type-I error of the mixture test over the points of a null design.

    Where a design point lists several unlabelled percentages, replicate
    ``r`` uses percentage ``r mod len(percentages)``.
    """
    design = FprDesign(design)
    params = params or {}
    test_cfg = test_cfg or sim_test_config()
    rows = []
    for i, (label, variants) in enumerate(_null_points(design, params)):
        def one(r, variants=variants, i=i):
            spec, fam = variants[r % len(variants)]
            return run_replicate(spec, fam, ["mixture"], test_cfg, [seed, i], r)["mixture"]

        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                p = np.array(list(pool.map(one, range(reps))))
        else:
            p = np.array([one(r) for r in range(reps)])
        rows.append({"point": label, "fpr": rejection_rate(p, alpha), "failed": int(np.sum(~np.isfinite(p))), "reps": reps})
    return rows


def power_design_spec(mu_b: float, var_b: float) -> DgpSpec:
    """50 labelled + 45 unlabelled class-A and 5 unlabelled class-B Gaussians."""
    return DgpSpec(n=100, d=5, u=50, theta_a=ParamSet(0.0, 1.0), theta_b=ParamSet(mu_b, var_b))


PRESETS = {
    "power-mean": ("curve", {"spec": power_design_spec(3.0, 1.0), "tests": ["mixture", "t"]}),
    "power-combined": ("curve", {"spec": power_design_spec(3.0, 5.0), "tests": ["mixture", "ks"]}),
    "power-variance": ("curve", {"spec": power_design_spec(0.0, 5.0), "tests": ["mixture", "f"]}),
    "grid-mean": ("grid", {"base": power_design_spec(3.0, 1.0), "comparator": "t"}),
    "grid-variance": ("grid", {"base": power_design_spec(0.0, 5.0), "comparator": "f"}),
    "grid-combined": ("grid", {"base": power_design_spec(3.0, 5.0), "comparator": "ks"}),
    "fpr-gaussian": ("fpr", {"study": FprDesign.UNLABELED_FRACTION}),
    "fpr-t": ("fpr", {"study": FprDesign.T_DEGREES}),
    "fpr-nb": ("fpr", {"study": FprDesign.NB_DISPERSION}),
    "fpr-zinb": ("fpr", {"study": FprDesign.ZINB_MISSPEC}),
}


def default_grid_cells(n: int = 100, step: int = 10):
    """Lower-triangular ``(u, d)`` grid with ``2 <= u <= n - 2`` and ``d <= u``."""
    us = [u for u in range(step, n - 1, step)]
    return [(u, d) for u in us for d in range(0, u + 1, step)]
