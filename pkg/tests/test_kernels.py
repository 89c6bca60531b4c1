import os
import subprocess
import sys

import numpy as np
import pytest

from semimix.distributions import FamilySpec, nb_log_constant
from semimix.em import (
    Dataset,
    EmConfig,
    e_step,
    fit_mixture,
    fit_null,
    lr_statistic,
    lr_statistics,
    m_step,
    penalized_family,
    resolve_family,
)
from semimix.kernels import _numba, _numpy


def gaussian_rows(rng, rows=12, n=40, u=20):
    Y = np.concatenate([rng.normal(0, 1, (rows, n - 4)), rng.normal(2.5, 2.0, (rows, 4))], axis=1)
    X = np.zeros((rows, n), bool)
    for k in range(rows):
        X[k, rng.permutation(n)[:u]] = True
    return Y, X


def count_rows(rng, rows=12, n=40, u=20, phi=0.3, mu=6.0, zero=0.0):
    r = 1 / phi
    Y = rng.negative_binomial(r, r / (r + mu), size=(rows, n)).astype(float)
    Y[rng.random((rows, n)) < zero] = 0.0
    X = np.zeros((rows, n), bool)
    for k in range(rows):
        X[k, rng.permutation(n)[:u]] = True
    return Y, X


@pytest.mark.parametrize("restarts", [0, 2])
def test_gaussian_batch_backends_agree(restarts):
    rng = np.random.default_rng(0)
    Y, X = gaussian_rows(rng)
    U = rng.random((Y.shape[0], restarts, 20))
    a = _numba.lr_batch_gaussian(Y, X, U, 0.5, 0.0, 1e-9, 300)
    b = _numpy.lr_batch_gaussian(Y, X, U, 0.5, 0.0, 1e-9, 300)
    assert np.array_equal(a[1], b[1])
    assert np.allclose(a[0], b[0], rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("pi,zero,varying", [(0.0, 0.0, False), (0.0, 0.0, True), (0.25, 0.25, False),
                                             (0.25, 0.25, True)])
def test_count_batch_backends_agree(pi, zero, varying):
    rng = np.random.default_rng(1)
    Y, X = count_rows(rng, zero=zero)
    O = rng.uniform(0.5, 2.0, Y.shape) if varying else np.ones_like(Y)
    C = nb_log_constant(Y, 0.3)
    U = rng.random((Y.shape[0], 1, 20))
    a = _numba.lr_batch_count(Y, O, C, X, U, 1 / 0.3, pi, 1e-9, 300)
    b = _numpy.lr_batch_count(Y, O, C, X, U, 1 / 0.3, pi, 1e-9, 300)
    assert np.array_equal(a[1], b[1])
    assert np.allclose(a[0], b[0], rtol=1e-9, atol=1e-9)


def test_common_offset_path_matches_general_path():
    # a common offset of 2 versus the same offsets perturbed by one ulp
    rng = np.random.default_rng(2)
    Y, X = count_rows(rng, rows=6)
    O = np.full_like(Y, 2.0)
    O2 = O.copy()
    O2[:, 0] = np.nextafter(2.0, 3.0)
    C = nb_log_constant(Y, 0.3)
    U = np.empty((6, 0, 20))
    a = _numba.lr_batch_count(Y, O, C, X, U, 1 / 0.3, 0.1, 1e-10, 400)[0]
    b = _numba.lr_batch_count(Y, O2, C, X, U, 1 / 0.3, 0.1, 1e-10, 400)[0]
    assert np.allclose(a, b, rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("family", [FamilySpec.gaussian(), FamilySpec.negbin(0.3), FamilySpec.zinb(0.3, 0.1)])
def test_batch_matches_single_fits(family):
    rng = np.random.default_rng(3)
    Y, X = count_rows(rng, rows=6) if family.kind.is_count else gaussian_rows(rng, rows=6)
    fam = resolve_family(Dataset(Y[0], X[0]), family)
    # fit_mixture draws its restarts from default_rng(seed); hand the batch the same draws
    seeds = [[7, k] for k in range(6)]
    U = np.stack([np.random.default_rng(s).random((2, 20)) for s in seeds])
    stats, status = lr_statistics(Y, X, fam, EmConfig(restarts=2), U)
    assert np.all(status == 0)
    for k in range(6):
        d = Dataset(Y[k], X[k])
        fit = fit_mixture(d, fam, EmConfig(restarts=2, seed=seeds[k]))
        assert stats[k] == pytest.approx(lr_statistic(fit, fit_null(d, fam)[1]), rel=1e-10, abs=1e-10)


def test_batch_deterministic_start_equals_fit_mixture():
    rng = np.random.default_rng(4)
    Y, X = gaussian_rows(rng, rows=5)
    fam = FamilySpec.gaussian()
    stats, _ = lr_statistics(Y, X, fam, EmConfig(restarts=0), np.empty((5, 0, 20)))
    for k in range(5):
        d = Dataset(Y[k], X[k])
        fit = fit_mixture(d, fam, EmConfig(restarts=0))
        assert stats[k] == pytest.approx(lr_statistic(fit, fit_null(d, fam)[1]), rel=1e-12, abs=1e-12)


def _penalty(var, a, s2):
    return -a * (s2 / var + np.log(var / s2))


@pytest.mark.parametrize("steps", [1, 5, 40])
def test_step_loop_reproduces_gaussian_kernel(steps):
    rng = np.random.default_rng(5)
    Y, X = gaussian_rows(rng, rows=1)
    d = Dataset(Y[0], X[0])
    fam = penalized_family(d, FamilySpec.gaussian())
    # deterministic start: unlabelled moments for class B, tau = 0.5
    ta, tb, _ = m_step(d, fam, d.x.astype(float))
    tau = 0.5
    b, _ = e_step(d, fam, ta, tb, tau)
    trace = []
    for _ in range(steps):
        ta, tb, tau = m_step(d, fam, b)
        b_next, ll = e_step(d, fam, ta, tb, tau)
        a, s2 = fam.penalty_weight, fam.variance_anchor
        trace.append(ll + _penalty(ta.variance, a, s2) + _penalty(tb.variance, a, s2))
        last_b, b = b, b_next
    fit = fit_mixture(d, fam, EmConfig(tol=1e-300, max_iter=steps, restarts=0))
    assert fit.iterations == steps
    assert fit.theta_a.mean == pytest.approx(ta.mean, rel=1e-11)
    assert fit.theta_b.variance == pytest.approx(tb.variance, rel=1e-11)
    assert fit.tau == pytest.approx(tau, rel=1e-11)
    assert fit.penalized_loglik == pytest.approx(trace[-1], rel=1e-12)
    assert np.allclose(fit.memberships_b, last_b, rtol=1e-10, atol=1e-14)


def test_step_loop_reproduces_count_kernel():
    rng = np.random.default_rng(6)
    Y, X = count_rows(rng, rows=1)
    o = rng.uniform(0.5, 2.0, Y.shape[1])
    d = Dataset(Y[0], X[0], o)
    fam = FamilySpec.negbin(0.3)
    ta, tb, _ = m_step(d, fam, d.x.astype(float))
    tau = 0.5
    b, _ = e_step(d, fam, ta, tb, tau)
    for _ in range(25):
        ta, tb, tau = m_step(d, fam, b)
        b, ll = e_step(d, fam, ta, tb, tau)
    fit = fit_mixture(d, fam, EmConfig(tol=1e-300, max_iter=25, restarts=0))
    assert fit.theta_a.mean == pytest.approx(ta.mean, rel=1e-11)
    assert fit.theta_b.mean == pytest.approx(tb.mean, rel=1e-11)
    assert fit.loglik == pytest.approx(ll, rel=1e-12)


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, SEMIMIX_DISABLE_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", "from semimix.kernels import backend_name; print(backend_name())"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"
