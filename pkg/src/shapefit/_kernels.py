"""Numba-compiled inner loops.

Everything here operates on contiguous float64 arrays and is kept free of
Python objects so the backfitting sweeps stay O(n) per component.  The
public, validated entry points live in :mod:`shapefit.prox` and
:mod:`shapefit.component`; this module is an implementation detail.
"""

import numpy as np
from numba import njit

# Inner solver mode codes (shared with component.py).
MODE_DC = 0          # total-variation penalty on slopes
MODE_AC = 1          # one-sided (decrease-only) penalty on slopes
MODE_CONVEX = 2      # slopes projected onto the nondecreasing cone
MODE_CONVEX_INC = 3  # slopes projected onto the nonneg nondecreasing cone
MODE_ISOTONIC = 4    # fit projected onto the nondecreasing cone, optional tv shrink
MODE_TV = 5          # total-variation penalty on the fit itself


@njit(cache=True)
def tv1d(y, lam):
    """Exact minimizer of 0.5*||x - y||^2 + lam * sum_i |x_i - x_{i-1}|.

    Direct non-iterative O(n) algorithm (Condat-style taut string).
    """
    n = y.shape[0]
    x = np.empty(n)
    if n == 1 or lam <= 0.0:
        for i in range(n):
            x[i] = y[i]
        return x

    # Segment state: [k0, k] is the segment under construction, km/kp are
    # the last positions where the running lower/upper bounds were clipped.
    k = 0
    k0 = 0
    km = 0
    kp = 0
    vmin = y[0] - lam
    vmax = y[0] + lam
    umin = lam
    umax = -lam

    while True:
        if k == n - 1:
            # Boundary phase: flush pending jumps, then close the segment.
            if umin < 0.0:
                for i in range(k0, km + 1):
                    x[i] = vmin
                k = km + 1
                k0 = k
                km = k
                vmin = y[k]
                umin = lam
                umax = y[k] + lam - vmax
                if k == n - 1:
                    x[k] = vmin + umin
                    return x
            elif umax > 0.0:
                for i in range(k0, kp + 1):
                    x[i] = vmax
                k = kp + 1
                k0 = k
                kp = k
                vmax = y[k]
                umax = -lam
                umin = y[k] - lam - vmin
                if k == n - 1:
                    x[k] = vmin + umin
                    return x
            else:
                v = vmin + umin / (k - k0 + 1)
                for i in range(k0, n):
                    x[i] = v
                return x
        else:
            if y[k + 1] + umin < vmin - lam:
                # Negative jump: the lower string snaps.
                for i in range(k0, km + 1):
                    x[i] = vmin
                k = km + 1
                k0 = k
                km = k
                kp = k
                vmin = y[k]
                vmax = y[k] + 2.0 * lam
                umin = lam
                umax = -lam
            elif y[k + 1] + umax > vmax + lam:
                # Positive jump: the upper string snaps.
                for i in range(k0, kp + 1):
                    x[i] = vmax
                k = kp + 1
                k0 = k
                km = k
                kp = k
                vmin = y[k] - 2.0 * lam
                vmax = y[k]
                umin = lam
                umax = -lam
            else:
                # No jump: absorb the next sample, keep bounds in the tube.
                k += 1
                umin += y[k] - vmin
                umax += y[k] - vmax
                if umin >= lam:
                    vmin += (umin - lam) / (k - k0 + 1)
                    umin = lam
                    km = k
                if umax <= -lam:
                    vmax += (umax + lam) / (k - k0 + 1)
                    umax = -lam
                    kp = k
    return x


@njit(cache=True)
def pav(y):
    """Euclidean projection onto {x : x_1 <= ... <= x_n} (pool adjacent violators)."""
    n = y.shape[0]
    out = np.empty(n)
    val = np.empty(n)
    cnt = np.empty(n, dtype=np.int64)
    m = 0
    for i in range(n):
        val[m] = y[i]
        cnt[m] = 1
        m += 1
        while m >= 2 and val[m - 2] > val[m - 1]:
            tot = cnt[m - 2] + cnt[m - 1]
            val[m - 2] = (cnt[m - 2] * val[m - 2] + cnt[m - 1] * val[m - 1]) / tot
            cnt[m - 2] = tot
            m -= 1
    pos = 0
    for b in range(m):
        for _ in range(cnt[b]):
            out[pos] = val[b]
            pos += 1
    return out


@njit(cache=True)
def nearly_isotonic(y, lam):
    """Exact minimizer of 0.5*||x - y||^2 + lam * sum_i max(x_i - x_{i+1}, 0).

    Follows the agglomerative solution path in the penalty weight: block
    values move linearly between merge events, and blocks only ever merge
    as the weight grows.  The path is traced until it reaches ``lam``.
    """
    n = y.shape[0]
    x = np.empty(n)
    if n == 1 or lam <= 0.0:
        for i in range(n):
            x[i] = y[i]
        return x

    # Block state; nxt/prv keep a live doubly-linked list after merges.
    val = y.copy()
    cnt = np.ones(n, dtype=np.int64)
    start = np.arange(n)
    nxt = np.empty(n, dtype=np.int64)
    prv = np.empty(n, dtype=np.int64)
    for i in range(n):
        nxt[i] = i + 1 if i + 1 < n else -1
        prv[i] = i - 1
    slope = np.zeros(n)

    lam_cur = 0.0
    head = 0
    while True:
        # Violation indicator per live edge decides each block's velocity.
        b = head
        while b != -1:
            s_left = 0.0
            if prv[b] != -1 and val[prv[b]] > val[b]:
                s_left = 1.0
            s_right = 0.0
            if nxt[b] != -1 and val[b] > val[nxt[b]]:
                s_right = 1.0
            slope[b] = (s_left - s_right) / cnt[b]
            b = nxt[b]

        # Earliest collision of adjacent block values.
        best_delta = -1.0
        best_b = -1
        b = head
        while nxt[b] != -1:
            nb = nxt[b]
            num = val[nb] - val[b]
            den = slope[b] - slope[nb]
            hit = False
            delta = 0.0
            if num > 0.0 and den > 0.0:
                delta = num / den
                hit = True
            elif num < 0.0 and den < 0.0:
                delta = num / den
                hit = True
            elif num == 0.0 and den > 0.0:
                delta = 0.0
                hit = True
            if hit and (best_b == -1 or delta < best_delta):
                best_delta = delta
                best_b = b
            b = nb

        if best_b == -1 or lam_cur + best_delta >= lam:
            step = lam - lam_cur
            b = head
            while b != -1:
                val[b] += step * slope[b]
                b = nxt[b]
            break

        # Advance to the event and merge the colliding pair.
        b = head
        while b != -1:
            val[b] += best_delta * slope[b]
            b = nxt[b]
        lam_cur += best_delta
        nb = nxt[best_b]
        tot = cnt[best_b] + cnt[nb]
        val[best_b] = (cnt[best_b] * val[best_b] + cnt[nb] * val[nb]) / tot
        cnt[best_b] = tot
        nxt[best_b] = nxt[nb]
        if nxt[nb] != -1:
            prv[nxt[nb]] = best_b

    b = head
    while b != -1:
        for i in range(start[b], start[b] + cnt[b]):
            x[i] = val[b]
        b = nxt[b]
    return x


@njit(cache=True, inline="always")
def _apply_a(s, w, gaps, z):
    """z <- A(s, w): z_1 = s, z_i = s + sum_{k<i} w_k * gaps_k."""
    m = z.shape[0]
    z[0] = s
    for i in range(1, m):
        z[i] = z[i - 1] + w[i - 1] * gaps[i - 1]


@njit(cache=True, inline="always")
def _apply_at(g, gaps, out_w):
    """Adjoint product: returns sum(g) and fills out_w_k = gaps_k * sum_{i>k} g_i."""
    m = g.shape[0]
    acc = 0.0
    for k in range(m - 2, -1, -1):
        acc += g[k + 1]
        out_w[k] = gaps[k] * acc
    return acc + g[0]


@njit(cache=True)
def _slope_penalty(w, lam, mode):
    p = 0.0
    if mode == MODE_DC:
        for i in range(w.shape[0] - 1):
            p += abs(w[i + 1] - w[i])
        p *= lam
    elif mode == MODE_AC:
        for i in range(w.shape[0] - 1):
            d = w[i] - w[i + 1]
            if d > 0.0:
                p += d
        p *= lam
    return p


@njit(cache=True)
def _slope_prox(w, lam_eta, mode):
    if mode == MODE_DC:
        return tv1d(w, lam_eta)
    if mode == MODE_AC:
        return nearly_isotonic(w, lam_eta)
    out = pav(w)
    if mode == MODE_CONVEX_INC:
        for i in range(out.shape[0]):
            if out[i] < 0.0:
                out[i] = 0.0
            else:
                break
    return out


@njit(cache=True)
def _weighted_sq(z, rbar, cw):
    f = 0.0
    for i in range(z.shape[0]):
        d = z[i] - rbar[i]
        f += cw[i] * d * d
    return 0.5 * f


@njit(cache=True)
def fista_slope(rbar, cw, gaps, lam, mode, lip, s0, w0, tol, max_iter):
    """Accelerated proximal gradient on the slope reparameterization.

    Minimizes 0.5*sum_i cw_i*(z_i - rbar_i)^2 + pen(w) with z = A(s, w),
    where pen is selected by ``mode``.  Monotone variant: a candidate that
    would increase the objective triggers a momentum restart and a plain
    proximal-gradient step (with emergency step halving as a last resort),
    so the recorded objective trace never increases.

    Returns (z, s, w, n_iter, converged, obj_trace).
    """
    m = rbar.shape[0]
    eta = 1.0 / lip

    s_x = s0
    w_x = w0.copy()
    if mode == MODE_CONVEX or mode == MODE_CONVEX_INC:
        # The objective treats the cone constraint as an indicator, so the
        # starting point must already be feasible.
        w_x = _slope_prox(w_x, 0.0, mode)
    z = np.empty(m)
    _apply_a(s_x, w_x, gaps, z)
    obj_x = _weighted_sq(z, rbar, cw) + _slope_penalty(w_x, lam, mode)

    trace = np.empty(max_iter + 1)
    trace[0] = obj_x

    s_prev = s_x
    w_prev = w_x.copy()
    t = 1.0
    grad_w = np.empty(m - 1)
    n_done = 0
    converged = False

    for it in range(max_iter):
        # Momentum point; extrapolation factor (t-1)/t_new.
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        coef = (t - 1.0) / t_new
        s_y = s_x + coef * (s_x - s_prev)
        w_y = w_x + coef * (w_x - w_prev)

        _apply_a(s_y, w_y, gaps, z)
        for i in range(m):
            z[i] = cw[i] * (z[i] - rbar[i])
        g_s = _apply_at(z, gaps, grad_w)

        s_c = s_y - eta * g_s
        w_c = w_y - eta * grad_w
        w_c = _slope_prox(w_c, eta * lam, mode)
        _apply_a(s_c, w_c, gaps, z)
        obj_c = _weighted_sq(z, rbar, cw) + _slope_penalty(w_c, lam, mode)

        # Momentum-sign adaptive restart: kill momentum when the update
        # direction opposes the extrapolation.
        mom_dot = (s_y - s_c) * (s_c - s_x)
        for i in range(m - 1):
            mom_dot += (w_y[i] - w_c[i]) * (w_c[i] - w_x[i])
        if mom_dot > 0.0:
            t_new = 1.0

        if obj_c > obj_x:
            # Restart from the last accepted iterate with a plain step.
            t_new = 1.0
            step = eta
            for bt in range(30):
                _apply_a(s_x, w_x, gaps, z)
                for i in range(m):
                    z[i] = cw[i] * (z[i] - rbar[i])
                g_s = _apply_at(z, gaps, grad_w)
                s_c = s_x - step * g_s
                w_c = w_x - step * grad_w
                w_c = _slope_prox(w_c, step * lam, mode)
                _apply_a(s_c, w_c, gaps, z)
                obj_c = _weighted_sq(z, rbar, cw) + _slope_penalty(w_c, lam, mode)
                if obj_c <= obj_x:
                    break
                step *= 0.5
            if obj_c > obj_x:
                # No descent direction left at float precision.
                s_c = s_x
                w_c = w_x
                obj_c = obj_x

        s_prev = s_x
        w_prev = w_x
        s_x = s_c
        w_x = w_c
        t = t_new

        n_done = it + 1
        trace[n_done] = obj_c
        if abs(obj_x - obj_c) <= tol * (1.0 + abs(obj_c)):
            obj_x = obj_c
            converged = True
            break
        obj_x = obj_c

    _apply_a(s_x, w_x, gaps, z)
    return z, s_x, w_x, n_done, converged, trace[: n_done + 1]


@njit(cache=True)
def _direct_prox(u, lam_eta, mode):
    if mode == MODE_TV:
        return tv1d(u, lam_eta)
    # Isotonic with LISO shrink: prox of i_cone + lam*tv is the projection of
    # the endpoint-shrunk input (tv is linear on the cone).
    v = u.copy()
    v[0] += lam_eta
    v[v.shape[0] - 1] -= lam_eta
    return pav(v)


@njit(cache=True)
def _direct_penalty(zv, lam, mode):
    # tv norm of the fit; for the isotonic cone this is z_m - z_1 once feasible.
    p = 0.0
    for i in range(1, zv.shape[0]):
        p += abs(zv[i] - zv[i - 1])
    return lam * p


@njit(cache=True)
def prox_grad_direct(rbar, cw, lam, mode, tol, max_iter):
    """Proximal gradient for the direct (fit-space) modes with tie weights.

    Minimizes 0.5*sum_i cw_i*(z_i - rbar_i)^2 + lam*||z||_tv (+ isotonic
    constraint for MODE_ISOTONIC).  With unit weights one prox step is the
    exact solution; otherwise plain monotone proximal gradient iterates with
    step 1/max(cw).

    Returns (z, n_iter, converged, obj_trace).
    """
    m = rbar.shape[0]
    unit = True
    cmax = 0.0
    for i in range(m):
        if cw[i] != 1.0:
            unit = False
        if cw[i] > cmax:
            cmax = cw[i]

    if unit:
        z = _direct_prox(rbar, lam, mode)
        obj = _weighted_sq(z, rbar, cw) + _direct_penalty(z, lam, mode)
        trace = np.empty(1)
        trace[0] = obj
        return z, 0, True, trace

    eta = 1.0 / cmax
    z = _direct_prox(rbar, lam, mode)  # feasible start
    obj = _weighted_sq(z, rbar, cw) + _direct_penalty(z, lam, mode)
    trace = np.empty(max_iter + 1)
    trace[0] = obj
    n_done = 0
    converged = False
    g = np.empty(m)
    for it in range(max_iter):
        for i in range(m):
            g[i] = z[i] - eta * cw[i] * (z[i] - rbar[i])
        z_new = _direct_prox(g, eta * lam, mode)
        obj_new = _weighted_sq(z_new, rbar, cw) + _direct_penalty(z_new, lam, mode)
        if obj_new > obj:
            z_new = z
            obj_new = obj
        z = z_new
        n_done = it + 1
        trace[n_done] = obj_new
        if abs(obj - obj_new) <= tol * (1.0 + abs(obj_new)):
            obj = obj_new
            converged = True
            break
        obj = obj_new
    return z, n_done, converged, trace[: n_done + 1]
