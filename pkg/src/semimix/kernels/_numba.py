"""Numba-compiled EM kernels.

Scalar loops over the unlabelled observations; labelled observations enter
the Gaussian kernel only through their count, sum and centred sum of
squares.  Each kernel returns

    (mu_a, var_a, mu_b, var_b, tau, loglik, penalized_loglik,
     iterations, converged, status)

with ``status`` 0 on success, 1 for a degenerate variance and 2 when both
component densities vanish at some observation.  Memberships of the
unlabelled observations are written into ``b_out`` and the penalised
log-likelihood after every E-step into ``trace``.
"""

import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)
MEAN_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# Gaussian
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _labeled_summary(y_lab):
    s = y_lab.shape[0]
    total = 0.0
    for i in range(s):
        total += y_lab[i]
    mean = total / s
    ss = 0.0
    for i in range(s):
        e = y_lab[i] - mean
        ss += e * e
    return total, mean, ss


@njit(cache=True, nogil=True)
def _gauss_mstep(sum_l, mean_l, ss_l, s, y_unl, b, pen, anchor):
    u = y_unl.shape[0]
    wa = float(s)
    sa = sum_l
    wb = 0.0
    sb = 0.0
    for i in range(u):
        wa += 1.0 - b[i]
        sa += (1.0 - b[i]) * y_unl[i]
        wb += b[i]
        sb += b[i] * y_unl[i]
    mu_a = sa / wa
    d = mean_l - mu_a
    ssa = ss_l + s * d * d
    for i in range(u):
        e = y_unl[i] - mu_a
        ssa += (1.0 - b[i]) * e * e
    var_a = (ssa + 2.0 * pen * anchor) / (wa + 2.0 * pen)
    if wb > 0.0:
        mu_b = sb / wb
        ssb = 0.0
        for i in range(u):
            e = y_unl[i] - mu_b
            ssb += b[i] * e * e
        var_b = (ssb + 2.0 * pen * anchor) / (wb + 2.0 * pen)
        tau = min(wb / u, 1.0)
    else:
        mu_b = mu_a
        var_b = var_a
        tau = 0.0
    return mu_a, var_a, mu_b, var_b, tau


@njit(cache=True, nogil=True)
def _gauss_estep(mean_l, ss_l, s, y_unl, mu_a, var_a, mu_b, var_b, tau, b):
    d = mean_l - mu_a
    ll = -0.5 * s * (LOG_2PI + math.log(var_a)) - (ss_l + s * d * d) / (2.0 * var_a)
    ca = -0.5 * (LOG_2PI + math.log(var_a))
    ia = 0.5 / var_a
    cb = -0.5 * (LOG_2PI + math.log(var_b))
    ib = 0.5 / var_b
    u = y_unl.shape[0]
    if tau <= 0.0:
        for i in range(u):
            e = y_unl[i] - mu_a
            ll += ca - ia * e * e
            b[i] = 0.0
        return ll
    if tau >= 1.0:
        for i in range(u):
            e = y_unl[i] - mu_b
            ll += cb - ib * e * e
            b[i] = 1.0
        return ll
    l1mt = math.log1p(-tau)
    lodds = math.log(tau) - l1mt
    for i in range(u):
        ea = y_unl[i] - mu_a
        eb = y_unl[i] - mu_b
        la = ca - ia * ea * ea
        z = cb - ib * eb * eb - la + lodds
        if z > 0.0:
            t = math.exp(-z)
            b[i] = 1.0 / (1.0 + t)
            ll += la + l1mt + z + math.log1p(t)
        else:
            t = math.exp(z)
            b[i] = t / (1.0 + t)
            ll += la + l1mt + math.log1p(t)
    return ll


@njit(cache=True, nogil=True)
def _gauss_penalty(var, pen, anchor):
    if pen <= 0.0:
        return 0.0
    return -pen * (anchor / var + math.log(var / anchor))


@njit(cache=True, nogil=True)
def em_gaussian(y_lab, y_unl, pen, anchor, init_b, tol, max_iter, b_out, trace):
    s = y_lab.shape[0]
    u = y_unl.shape[0]
    sum_l, mean_l, ss_l = _labeled_summary(y_lab)
    if init_b.shape[0] == 0:
        for i in range(u):
            b_out[i] = 1.0
        mu_a, var_a, mu_b, var_b, tau = _gauss_mstep(sum_l, mean_l, ss_l, s, y_unl, b_out, pen, anchor)
        tau = 0.5
    else:
        for i in range(u):
            b_out[i] = init_b[i]
        mu_a, var_a, mu_b, var_b, tau = _gauss_mstep(sum_l, mean_l, ss_l, s, y_unl, b_out, pen, anchor)

    # b_out always holds the memberships that produced the current parameters
    work = np.empty(u)
    it = 0
    converged = False
    status = 0
    ll = -np.inf
    pll = -np.inf
    if not (var_a > 0.0 and var_b > 0.0):
        return mu_a, var_a, mu_b, var_b, tau, ll, pll, it, converged, 1
    ll = _gauss_estep(mean_l, ss_l, s, y_unl, mu_a, var_a, mu_b, var_b, tau, b_out)
    pll = ll + _gauss_penalty(var_a, pen, anchor) + _gauss_penalty(var_b, pen, anchor)
    if not math.isfinite(pll):
        return mu_a, var_a, mu_b, var_b, tau, ll, pll, it, converged, 2
    trace[0] = pll
    while True:
        prev = pll
        mu_a, var_a, mu_b, var_b, tau = _gauss_mstep(sum_l, mean_l, ss_l, s, y_unl, b_out, pen, anchor)
        it += 1
        if not (var_a > 0.0 and var_b > 0.0):
            status = 1
            break
        ll = _gauss_estep(mean_l, ss_l, s, y_unl, mu_a, var_a, mu_b, var_b, tau, work)
        pll = ll + _gauss_penalty(var_a, pen, anchor) + _gauss_penalty(var_b, pen, anchor)
        if not math.isfinite(pll):
            status = 2
            break
        trace[it] = pll
        if abs(pll - prev) <= tol * abs(prev):
            converged = True
            break
        if it >= max_iter:
            break
        b_out[:] = work
    return mu_a, var_a, mu_b, var_b, tau, ll, pll, it, converged, status


@njit(cache=True, nogil=True)
def lr_batch_gaussian(Y, X, U, pen, anchor, tol, max_iter):
    """Likelihood-ratio statistics for a stack of datasets (rows of Y, X).

    ``anchor <= 0`` derives the variance anchor per row from the labelled
    observations.  ``U[k, r]`` holds the initial memberships of restart r.
    """
    nrow, n = Y.shape
    restarts = U.shape[1]
    stats = np.empty(nrow)
    status = np.zeros(nrow, dtype=np.int64)
    trace = np.empty(max_iter + 1)
    empty = np.empty(0)
    for k in range(nrow):
        u = 0
        for i in range(n):
            if X[k, i]:
                u += 1
        y_lab = np.empty(n - u)
        y_unl = np.empty(u)
        il = 0
        iu = 0
        total = 0.0
        for i in range(n):
            total += Y[k, i]
            if X[k, i]:
                y_unl[iu] = Y[k, i]
                iu += 1
            else:
                y_lab[il] = Y[k, i]
                il += 1
        mu0 = total / n
        var0 = 0.0
        for i in range(n):
            e = Y[k, i] - mu0
            var0 += e * e
        var0 /= n
        if not var0 > 0.0:
            stats[k] = np.nan
            status[k] = 1
            continue
        ll0 = -0.5 * n * (LOG_2PI + math.log(var0) + 1.0)
        a = anchor
        if a <= 0.0:
            _, _, ss_l = _labeled_summary(y_lab)
            a = ss_l / (n - u)
            if not a > 0.0:
                a = var0
        b_out = np.empty(u)
        best_pll = -np.inf
        best_ll = -np.inf
        ok = False
        for r in range(restarts + 1):
            init = empty if r == 0 else U[k, r - 1]
            res = em_gaussian(y_lab, y_unl, pen, a, init, tol, max_iter, b_out, trace)
            if res[9] != 0:
                continue
            if not ok or res[6] > best_pll:
                best_pll = res[6]
                best_ll = res[5]
                ok = True
        if not ok:
            stats[k] = np.nan
            status[k] = 1
            continue
        stats[k] = max(0.0, 2.0 * (best_ll - ll0))
    return stats, status


# ---------------------------------------------------------------------------
# negative binomial, optionally zero-inflated
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _count_logpmf(y, o, c, mu, r, pi, l1mpi):
    m = mu * o
    lp = c - r * math.log1p(m / r)
    if y > 0.0:
        lp += y * math.log(m / (r + m))
        if pi > 0.0:
            lp += l1mpi
    elif pi > 0.0:
        lp = math.log(pi + (1.0 - pi) * math.exp(lp))
    return lp


@njit(cache=True, nogil=True)
def _count_mstep(sy_l, so_l, y_unl, o_unl, b, pi):
    u = y_unl.shape[0]
    wya = sy_l
    woa = so_l
    wyb = 0.0
    wob = 0.0
    wb = 0.0
    for i in range(u):
        wya += (1.0 - b[i]) * y_unl[i]
        woa += (1.0 - b[i]) * o_unl[i]
        wyb += b[i] * y_unl[i]
        wob += b[i] * o_unl[i]
        wb += b[i]
    mu_a = max(wya / ((1.0 - pi) * woa), MEAN_FLOOR)
    if wb > 0.0:
        mu_b = max(wyb / ((1.0 - pi) * wob), MEAN_FLOOR)
        tau = min(wb / u, 1.0)
    else:
        mu_b = mu_a
        tau = 0.0
    return mu_a, mu_b, tau


@njit(cache=True, nogil=True)
def _count_estep(y_lab, o_lab, c_lab, y_unl, o_unl, c_unl, r, pi, mu_a, mu_b, tau, b):
    l1mpi = math.log1p(-pi) if pi > 0.0 else 0.0
    ll = 0.0
    for i in range(y_lab.shape[0]):
        ll += _count_logpmf(y_lab[i], o_lab[i], c_lab[i], mu_a, r, pi, l1mpi)
    u = y_unl.shape[0]
    if tau <= 0.0:
        for i in range(u):
            ll += _count_logpmf(y_unl[i], o_unl[i], c_unl[i], mu_a, r, pi, l1mpi)
            b[i] = 0.0
        return ll, -1
    if tau >= 1.0:
        for i in range(u):
            ll += _count_logpmf(y_unl[i], o_unl[i], c_unl[i], mu_b, r, pi, l1mpi)
            b[i] = 1.0
        return ll, -1
    l1mt = math.log1p(-tau)
    lodds = math.log(tau) - l1mt
    for i in range(u):
        la = _count_logpmf(y_unl[i], o_unl[i], c_unl[i], mu_a, r, pi, l1mpi)
        lb = _count_logpmf(y_unl[i], o_unl[i], c_unl[i], mu_b, r, pi, l1mpi)
        if la == -np.inf and lb == -np.inf:
            return -np.inf, i
        ll += _mix_term(la, lb, l1mt, lodds, b, i)
    return ll, -1


@njit(cache=True, nogil=True)
def _mix_term(la, lb, l1mt, lodds, b, i):
    z = lb - la + lodds
    if z > 0.0:
        t = math.exp(-z)
        b[i] = 1.0 / (1.0 + t)
        return la + l1mt + z + math.log1p(t)
    t = math.exp(z)
    b[i] = t / (1.0 + t)
    return la + l1mt + math.log1p(t)


@njit(cache=True, nogil=True)
def _count_terms(mu, o, r, pi):
    """Per-component constants when every offset equals ``o``.

    ``logpmf(y) = c + y * slope - shift`` for ``y > 0`` (plus ``log(1 - pi)``)
    and ``zero`` for ``y = 0``.
    """
    m = mu * o
    slope = math.log(m / (r + m))
    shift = r * math.log1p(m / r)
    zero = -shift
    if pi > 0.0:
        zero = math.log(pi + (1.0 - pi) * math.exp(-shift))
    return slope, shift, zero


@njit(cache=True, nogil=True)
def _count_estep_common(lab_c, lab_y, lab_nz, y_unl, c_unl, o, r, pi, mu_a, mu_b, tau, b):
    """E-step for a common offset; the labelled part reduces to sums."""
    l1mpi = math.log1p(-pi) if pi > 0.0 else 0.0
    lab_n = lab_nz[1]
    nz = lab_nz[0]
    sa, ha, za = _count_terms(mu_a, o, r, pi)
    ll = lab_c + sa * lab_y + nz * (l1mpi - ha) + (lab_n - nz) * za
    u = y_unl.shape[0]
    if tau <= 0.0 or tau >= 1.0:
        s, h, z0 = (sa, ha, za) if tau <= 0.0 else _count_terms(mu_b, o, r, pi)
        fill = 0.0 if tau <= 0.0 else 1.0
        for i in range(u):
            y = y_unl[i]
            ll += c_unl[i] + y * s - h + l1mpi if y > 0.0 else z0
            b[i] = fill
        return ll, -1
    sb, hb, zb = _count_terms(mu_b, o, r, pi)
    l1mt = math.log1p(-tau)
    lodds = math.log(tau) - l1mt
    for i in range(u):
        y = y_unl[i]
        if y > 0.0:
            base = c_unl[i] + l1mpi
            la = base + y * sa - ha
            lb = base + y * sb - hb
        else:
            la = za
            lb = zb
        if la == -np.inf and lb == -np.inf:
            return -np.inf, i
        ll += _mix_term(la, lb, l1mt, lodds, b, i)
    return ll, -1


@njit(cache=True, nogil=True)
def _count_eval(o, lab_c, sy_l, lab_nz, y_lab, o_lab, c_lab, y_unl, o_unl, c_unl, r, pi, mu_a, mu_b, tau, b):
    if o > 0.0:
        return _count_estep_common(lab_c, sy_l, lab_nz, y_unl, c_unl, o, r, pi, mu_a, mu_b, tau, b)
    return _count_estep(y_lab, o_lab, c_lab, y_unl, o_unl, c_unl, r, pi, mu_a, mu_b, tau, b)


@njit(cache=True, nogil=True)
def _common_offset(o_lab, o_unl):
    o = o_lab[0] if o_lab.shape[0] > 0 else o_unl[0]
    for i in range(o_lab.shape[0]):
        if o_lab[i] != o:
            return -1.0
    for i in range(o_unl.shape[0]):
        if o_unl[i] != o:
            return -1.0
    return o


@njit(cache=True, nogil=True)
def em_count(y_lab, o_lab, c_lab, y_unl, o_unl, c_unl, r, pi, init_b, tol, max_iter, b_out, trace):
    u = y_unl.shape[0]
    sy_l = 0.0
    so_l = 0.0
    for i in range(y_lab.shape[0]):
        sy_l += y_lab[i]
        so_l += o_lab[i]
    if init_b.shape[0] == 0:
        for i in range(u):
            b_out[i] = 1.0
        mu_a, mu_b, tau = _count_mstep(sy_l, so_l, y_unl, o_unl, b_out, pi)
        tau = 0.5
    else:
        for i in range(u):
            b_out[i] = init_b[i]
        mu_a, mu_b, tau = _count_mstep(sy_l, so_l, y_unl, o_unl, b_out, pi)

    o = _common_offset(o_lab, o_unl)
    lab_c = 0.0
    lab_nz = np.zeros(2)
    lab_nz[1] = y_lab.shape[0]
    for i in range(y_lab.shape[0]):
        lab_c += c_lab[i]
        if y_lab[i] > 0.0:
            lab_nz[0] += 1.0

    work = np.empty(u)
    it = 0
    converged = False
    status = 0
    ll, bad = _count_eval(o, lab_c, sy_l, lab_nz, y_lab, o_lab, c_lab, y_unl, o_unl, c_unl, r, pi,
                          mu_a, mu_b, tau, b_out)
    if bad >= 0 or not math.isfinite(ll):
        return mu_a, np.nan, mu_b, np.nan, tau, ll, ll, it, converged, 2
    trace[0] = ll
    while True:
        prev = ll
        mu_a, mu_b, tau = _count_mstep(sy_l, so_l, y_unl, o_unl, b_out, pi)
        it += 1
        ll, bad = _count_eval(o, lab_c, sy_l, lab_nz, y_lab, o_lab, c_lab, y_unl, o_unl, c_unl, r, pi,
                              mu_a, mu_b, tau, work)
        if bad >= 0 or not math.isfinite(ll):
            status = 2
            break
        trace[it] = ll
        if abs(ll - prev) <= tol * abs(prev):
            converged = True
            break
        if it >= max_iter:
            break
        b_out[:] = work
    return mu_a, np.nan, mu_b, np.nan, tau, ll, ll, it, converged, status


@njit(cache=True, nogil=True)
def lr_batch_count(Y, O, C, X, U, r, pi, tol, max_iter):
    """Count-family analogue of :func:`lr_batch_gaussian`.

    ``C`` holds the mean-free log-mass constants matching ``Y``.
    """
    nrow, n = Y.shape
    restarts = U.shape[1]
    stats = np.empty(nrow)
    status = np.zeros(nrow, dtype=np.int64)
    trace = np.empty(max_iter + 1)
    empty = np.empty(0)
    l1mpi = math.log1p(-pi) if pi > 0.0 else 0.0
    for k in range(nrow):
        u = 0
        for i in range(n):
            if X[k, i]:
                u += 1
        y_lab = np.empty(n - u)
        o_lab = np.empty(n - u)
        c_lab = np.empty(n - u)
        y_unl = np.empty(u)
        o_unl = np.empty(u)
        c_unl = np.empty(u)
        il = 0
        iu = 0
        sy = 0.0
        so = 0.0
        for i in range(n):
            sy += Y[k, i]
            so += O[k, i]
            if X[k, i]:
                y_unl[iu] = Y[k, i]
                o_unl[iu] = O[k, i]
                c_unl[iu] = C[k, i]
                iu += 1
            else:
                y_lab[il] = Y[k, i]
                o_lab[il] = O[k, i]
                c_lab[il] = C[k, i]
                il += 1
        mu0 = max(sy / ((1.0 - pi) * so), MEAN_FLOOR)
        ll0 = 0.0
        for i in range(n):
            ll0 += _count_logpmf(Y[k, i], O[k, i], C[k, i], mu0, r, pi, l1mpi)
        b_out = np.empty(u)
        best_pll = -np.inf
        best_ll = -np.inf
        ok = False
        for j in range(restarts + 1):
            init = empty if j == 0 else U[k, j - 1]
            res = em_count(y_lab, o_lab, c_lab, y_unl, o_unl, c_unl, r, pi, init, tol, max_iter, b_out, trace)
            if res[9] != 0:
                continue
            if not ok or res[6] > best_pll:
                best_pll = res[6]
                best_ll = res[5]
                ok = True
        if not ok or not math.isfinite(ll0):
            stats[k] = np.nan
            status[k] = 2
            continue
        stats[k] = max(0.0, 2.0 * (best_ll - ll0))
    return stats, status
