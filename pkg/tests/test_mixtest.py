import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from semimix.distributions import FamilySpec, ParamSet
from semimix.em import Dataset, EmConfig
from semimix.errors import DegenerateVarianceError, InputError
from semimix.mixtest import (
    Calibrator,
    Method,
    Status,
    TestConfig,
    early_stop_bound,
    mixture_test,
    p_value,
    resample_null,
)


def null_data(rng, n=60, u=30):
    x = np.zeros(n, bool)
    x[n - u:] = True
    return Dataset(rng.normal(0, 1, n), x)


def shifted_data(rng):
    y = np.r_[rng.normal(0, 1, 80), rng.normal(4, 1, 20)]
    x = np.r_[np.zeros(50, bool), np.ones(50, bool)]
    return Dataset(y, x)


@pytest.mark.parametrize("e,b,p", [(0, 99, 0.01), (10, 999, 0.011), (7, 7, 1.0)])
def test_p_value(e, b, p):
    assert p_value(e, b) == pytest.approx(p, rel=1e-15)


def test_capped_locus_cannot_reach_bonferroni():
    assert p_value(10, 10**6) == pytest.approx(1.1e-5, rel=1e-4)
    assert p_value(10, 10**6) > 0.05 / 26516


@pytest.mark.parametrize("e,b", [(-1, 10), (11, 10), (0, 0)])
def test_p_value_rejects_bad_counts(e, b):
    with pytest.raises(InputError):
        p_value(e, b)


def test_early_stop_bound():
    assert early_stop_bound(10, 10**6) == 12 / (10**6 + 1)


def test_config_validation():
    with pytest.raises(InputError):
        TestConfig(b_max=10, batch=20)
    with pytest.raises(InputError):
        TestConfig(exceedance_cap=0)


def test_permutation_preserves_multiset():
    rng = np.random.default_rng(0)
    o = rng.uniform(0.5, 2, 30)
    d = Dataset(rng.poisson(5, 30).astype(float), np.r_[np.zeros(28, bool), np.ones(2, bool)], o)
    r = resample_null(d, FamilySpec.negbin(0.2), ParamSet(5.0), Method.PERMUTATION, rng)
    assert np.array_equal(np.sort(r.y), np.sort(d.y))
    assert r.u == d.u
    assert r.y.sum() == d.y.sum() and r.offsets.sum() == d.offsets.sum()
    d2 = Dataset(d.y, np.r_[np.ones(28, bool), np.zeros(2, bool)], o)
    r2 = resample_null(d2, FamilySpec.negbin(0.2), ParamSet(5.0), "perm", rng)
    assert r2.s == 2


def test_bootstrap_mean():
    rng = np.random.default_rng(1)
    d = Dataset(np.zeros(100_000) + rng.normal(size=100_000), np.r_[np.zeros(50_000, bool), np.ones(50_000, bool)])
    r = resample_null(d, FamilySpec.gaussian(), ParamSet(0.0, 1.0), Method.BOOTSTRAP, rng)
    assert -0.02 <= r.y.mean() <= 0.02
    assert np.array_equal(r.x, d.x)


def test_strong_signal_has_zero_exceedances():
    res = mixture_test(shifted_data(np.random.default_rng(3)), FamilySpec.gaussian(),
                       TestConfig(b_max=99, batch=33, exceedance_cap=99))
    assert res.status is Status.COMPLETED
    assert (res.exceedances, res.b_done) == (0, 99)
    assert res.pvalue == pytest.approx(0.01)


def test_early_stop_under_null():
    res = mixture_test(null_data(np.random.default_rng(4)), FamilySpec.gaussian(),
                       TestConfig(b_max=10_000, batch=100, exceedance_cap=10, em=EmConfig(restarts=0)))
    if res.status is Status.EARLY_STOPPED:
        assert res.exceedances > 10 and res.b_done % 100 == 0 and res.b_done < 10_000
        assert p_value(0, 10_000) < early_stop_bound(10, 10_000)


def test_reproducible_and_batch_independent():
    d = null_data(np.random.default_rng(5))
    base = dict(b_max=120, exceedance_cap=1000, seed=42, em=EmConfig(restarts=1))
    a = mixture_test(d, FamilySpec.gaussian(), TestConfig(batch=120, **base))
    b = mixture_test(d, FamilySpec.gaussian(), TestConfig(batch=7, **base))
    c = mixture_test(d, FamilySpec.gaussian(), TestConfig(batch=120, **base))
    assert (a.stat, a.exceedances, a.pvalue) == (b.stat, b.exceedances, b.pvalue) == (c.stat, c.exceedances, c.pvalue)


def test_resample_stats_are_order_free():
    cal = Calibrator(null_data(np.random.default_rng(6)), FamilySpec.gaussian(), TestConfig(b_max=40, batch=40))
    whole = cal.resample_stats(0, 40)
    parts = np.concatenate([cal.resample_stats(20, 20), cal.resample_stats(0, 20)])
    assert np.array_equal(whole, np.r_[parts[20:], parts[:20]])


@pytest.mark.parametrize("family", [FamilySpec.negbin(), FamilySpec.zinb()])
def test_count_test_runs(family):
    rng = np.random.default_rng(7)
    y = rng.negative_binomial(5, 5 / 15, size=80).astype(float)
    y[rng.random(80) < 0.15] = 0
    d = Dataset(y, np.r_[np.zeros(40, bool), np.ones(40, bool)])
    res = mixture_test(d, family, TestConfig(b_max=50, batch=25, em=EmConfig(restarts=1)))
    assert 0 < res.pvalue <= 1 and res.family.dispersion > 0


def test_reestimated_nuisance_runs():
    rng = np.random.default_rng(8)
    d = Dataset(rng.poisson(8, 60).astype(float), np.r_[np.zeros(30, bool), np.ones(30, bool)])
    res = mixture_test(d, FamilySpec.negbin(), TestConfig(b_max=20, batch=20, reestimate_nuisance=True))
    assert res.b_done == 20


def test_bootstrap_method():
    res = mixture_test(shifted_data(np.random.default_rng(9)), FamilySpec.gaussian(),
                       TestConfig(b_max=50, batch=50, method="boot"))
    assert res.pvalue == pytest.approx(1 / 51)


def test_degenerate_data_raises():
    d = Dataset(np.ones(10), np.r_[np.zeros(5, bool), np.ones(5, bool)])
    with pytest.raises(DegenerateVarianceError):
        mixture_test(d, FamilySpec.gaussian())


@given(st.integers(0, 10**6), st.integers(1, 10**6))
def test_p_value_range(e, b):
    e = min(e, b)
    p = p_value(e, b)
    assert 0 < p <= 1 and math.isclose(p, (e + 1) / (b + 1))
