"""Vectorised numpy versions of the EM kernels.

Same signatures and return conventions as the numba module; the loops over
observations become array expressions, the loops over iterations and
dataset rows stay in Python.
"""

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
MEAN_FLOOR = 1e-12


def _log_mix(la, lb, tau):
    """Per-observation mixture log-likelihood and class-B posterior."""
    if tau <= 0.0:
        return la, np.zeros_like(la)
    if tau >= 1.0:
        return lb, np.ones_like(lb)
    l1mt = math.log1p(-tau)
    z = lb - la + (math.log(tau) - l1mt)
    # logaddexp(0, z) and the logistic function, both overflow-safe
    with np.errstate(invalid="ignore"):
        ll = la + l1mt + np.logaddexp(0.0, z)
    b = np.exp(z - np.logaddexp(0.0, z))
    return ll, b


# ---------------------------------------------------------------------------
# Gaussian
# ---------------------------------------------------------------------------


def _gauss_mstep(mean_l, ss_l, s, y_unl, b, pen, anchor):
    wa_u = 1.0 - b
    wa = s + wa_u.sum()
    mu_a = (s * mean_l + np.dot(wa_u, y_unl)) / wa
    ssa = ss_l + s * (mean_l - mu_a) ** 2 + np.dot(wa_u, (y_unl - mu_a) ** 2)
    var_a = (ssa + 2.0 * pen * anchor) / (wa + 2.0 * pen)
    wb = b.sum()
    if wb > 0.0:
        mu_b = np.dot(b, y_unl) / wb
        ssb = np.dot(b, (y_unl - mu_b) ** 2)
        var_b = (ssb + 2.0 * pen * anchor) / (wb + 2.0 * pen)
        tau = min(wb / y_unl.size, 1.0)
    else:
        mu_b, var_b, tau = mu_a, var_a, 0.0
    return float(mu_a), float(var_a), float(mu_b), float(var_b), float(tau)


def _gauss_penalty(var, pen, anchor):
    if pen <= 0.0:
        return 0.0
    return -pen * (anchor / var + math.log(var / anchor))


def em_gaussian(y_lab, y_unl, pen, anchor, init_b, tol, max_iter, b_out, trace):
    s = y_lab.size
    mean_l = y_lab.mean()
    ss_l = float(np.sum((y_lab - mean_l) ** 2))
    if init_b.size == 0:
        b_out[:] = 1.0
        mu_a, var_a, mu_b, var_b, _ = _gauss_mstep(mean_l, ss_l, s, y_unl, b_out, pen, anchor)
        tau = 0.5
    else:
        b_out[:] = init_b
        mu_a, var_a, mu_b, var_b, tau = _gauss_mstep(mean_l, ss_l, s, y_unl, b_out, pen, anchor)

    def evaluate(mu_a, var_a, mu_b, var_b, tau):
        ll_lab = -0.5 * s * (LOG_2PI + math.log(var_a)) - (ss_l + s * (mean_l - mu_a) ** 2) / (2.0 * var_a)
        la = -0.5 * (LOG_2PI + math.log(var_a)) - (y_unl - mu_a) ** 2 / (2.0 * var_a)
        lb = -0.5 * (LOG_2PI + math.log(var_b)) - (y_unl - mu_b) ** 2 / (2.0 * var_b)
        ll_unl, b = _log_mix(la, lb, tau)
        ll = float(ll_lab + ll_unl.sum())
        return ll, ll + _gauss_penalty(var_a, pen, anchor) + _gauss_penalty(var_b, pen, anchor), b

    # b_out always holds the memberships that produced the current parameters
    it = 0
    converged = False
    status = 0
    ll = pll = -np.inf
    if not (var_a > 0.0 and var_b > 0.0):
        return mu_a, var_a, mu_b, var_b, tau, ll, pll, it, converged, 1
    ll, pll, b = evaluate(mu_a, var_a, mu_b, var_b, tau)
    if not math.isfinite(pll):
        return mu_a, var_a, mu_b, var_b, tau, ll, pll, it, converged, 2
    b_out[:] = b
    trace[0] = pll
    while True:
        prev = pll
        mu_a, var_a, mu_b, var_b, tau = _gauss_mstep(mean_l, ss_l, s, y_unl, b_out, pen, anchor)
        it += 1
        if not (var_a > 0.0 and var_b > 0.0):
            status = 1
            break
        ll, pll, b = evaluate(mu_a, var_a, mu_b, var_b, tau)
        if not math.isfinite(pll):
            status = 2
            break
        trace[it] = pll
        if abs(pll - prev) <= tol * abs(prev):
            converged = True
            break
        if it >= max_iter:
            break
        b_out[:] = b
    return mu_a, var_a, mu_b, var_b, tau, ll, pll, it, converged, status


def lr_batch_gaussian(Y, X, U, pen, anchor, tol, max_iter):
    nrow, n = Y.shape
    stats = np.empty(nrow)
    status = np.zeros(nrow, dtype=np.int64)
    trace = np.empty(max_iter + 1)
    empty = np.empty(0)
    for k in range(nrow):
        y, x = Y[k], X[k]
        y_lab, y_unl = y[~x], y[x]
        var0 = float(np.mean((y - y.mean()) ** 2))
        if not var0 > 0.0:
            stats[k], status[k] = np.nan, 1
            continue
        ll0 = -0.5 * n * (LOG_2PI + math.log(var0) + 1.0)
        a = anchor
        if a <= 0.0:
            a = float(np.mean((y_lab - y_lab.mean()) ** 2))
            if not a > 0.0:
                a = var0
        b_out = np.empty(y_unl.size)
        best = None
        for r in range(U.shape[1] + 1):
            init = empty if r == 0 else U[k, r - 1]
            res = em_gaussian(y_lab, y_unl, pen, a, init, tol, max_iter, b_out, trace)
            if res[9] == 0 and (best is None or res[6] > best[6]):
                best = res
        if best is None:
            stats[k], status[k] = np.nan, 1
            continue
        stats[k] = max(0.0, 2.0 * (best[5] - ll0))
    return stats, status


# ---------------------------------------------------------------------------
# negative binomial, optionally zero-inflated
# ---------------------------------------------------------------------------


def _count_logpmf(y, o, c, mu, r, pi):
    m = mu * o
    with np.errstate(divide="ignore"):
        lp = c - r * np.log1p(m / r) + np.where(y > 0, y * np.log(m / (r + m)), 0.0)
        if pi > 0.0:
            lp = np.where(y > 0, lp + math.log1p(-pi), np.log(pi + (1.0 - pi) * np.exp(lp)))
    return lp


def _count_mstep(sy_l, so_l, y_unl, o_unl, b, pi):
    wa = 1.0 - b
    mu_a = max((sy_l + np.dot(wa, y_unl)) / ((1.0 - pi) * (so_l + np.dot(wa, o_unl))), MEAN_FLOOR)
    wb = b.sum()
    if wb > 0.0:
        mu_b = max(np.dot(b, y_unl) / ((1.0 - pi) * np.dot(b, o_unl)), MEAN_FLOOR)
        tau = min(wb / y_unl.size, 1.0)
    else:
        mu_b, tau = mu_a, 0.0
    return float(mu_a), float(mu_b), float(tau)


def em_count(y_lab, o_lab, c_lab, y_unl, o_unl, c_unl, r, pi, init_b, tol, max_iter, b_out, trace):
    sy_l = float(y_lab.sum())
    so_l = float(o_lab.sum())
    if init_b.size == 0:
        b_out[:] = 1.0
        mu_a, mu_b, _ = _count_mstep(sy_l, so_l, y_unl, o_unl, b_out, pi)
        tau = 0.5
    else:
        b_out[:] = init_b
        mu_a, mu_b, tau = _count_mstep(sy_l, so_l, y_unl, o_unl, b_out, pi)

    def evaluate(mu_a, mu_b, tau):
        ll_lab = _count_logpmf(y_lab, o_lab, c_lab, mu_a, r, pi).sum()
        la = _count_logpmf(y_unl, o_unl, c_unl, mu_a, r, pi)
        lb = _count_logpmf(y_unl, o_unl, c_unl, mu_b, r, pi)
        if 0.0 < tau < 1.0 and np.any(np.isneginf(la) & np.isneginf(lb)):
            return -np.inf, None
        ll_unl, b = _log_mix(la, lb, tau)
        return float(ll_lab + ll_unl.sum()), b

    it = 0
    converged = False
    status = 0
    ll, b = evaluate(mu_a, mu_b, tau)
    if b is None or not math.isfinite(ll):
        return mu_a, np.nan, mu_b, np.nan, tau, ll, ll, it, converged, 2
    b_out[:] = b
    trace[0] = ll
    while True:
        prev = ll
        mu_a, mu_b, tau = _count_mstep(sy_l, so_l, y_unl, o_unl, b_out, pi)
        it += 1
        ll, b = evaluate(mu_a, mu_b, tau)
        if b is None or not math.isfinite(ll):
            status = 2
            break
        trace[it] = ll
        if abs(ll - prev) <= tol * abs(prev):
            converged = True
            break
        if it >= max_iter:
            break
        b_out[:] = b
    return mu_a, np.nan, mu_b, np.nan, tau, ll, ll, it, converged, status


def lr_batch_count(Y, O, C, X, U, r, pi, tol, max_iter):
    nrow = Y.shape[0]
    stats = np.empty(nrow)
    status = np.zeros(nrow, dtype=np.int64)
    trace = np.empty(max_iter + 1)
    empty = np.empty(0)
    for k in range(nrow):
        y, o, c, x = Y[k], O[k], C[k], X[k]
        mu0 = max(y.sum() / ((1.0 - pi) * o.sum()), MEAN_FLOOR)
        ll0 = float(_count_logpmf(y, o, c, mu0, r, pi).sum())
        b_out = np.empty(int(x.sum()))
        best = None
        for j in range(U.shape[1] + 1):
            init = empty if j == 0 else U[k, j - 1]
            res = em_count(y[~x], o[~x], c[~x], y[x], o[x], c[x], r, pi, init, tol, max_iter, b_out, trace)
            if res[9] == 0 and (best is None or res[6] > best[6]):
                best = res
        if best is None or not math.isfinite(ll0):
            stats[k], status[k] = np.nan, 2
            continue
        stats[k] = max(0.0, 2.0 * (best[5] - ll0))
    return stats, status
