"""Compiled right-hand sides and a per-trajectory DOP853 driver.

These mirror the numpy code paths in :mod:`subharmonic.systems` and
:mod:`subharmonic.integrate` for the two concrete model families, so that
state and variational flows avoid Python overhead. Kernels are selected by
an integer code because numba cannot cache functions that take other
compiled functions as arguments.
"""

from __future__ import annotations

import numba as nb
import numpy as np
from scipy.integrate._ivp import dop853_coefficients as _dop

R4BP_STATE, R4BP_VAR, PEND_STATE, PEND_VAR, R4BP_JET, PEND_JET = 0, 1, 2, 3, 4, 5

_NS = _dop.N_STAGES
TABLEAU = (
    np.ascontiguousarray(_dop.A[:_NS, :_NS]),
    np.ascontiguousarray(_dop.B),
    np.ascontiguousarray(_dop.C[:_NS]),
    np.ascontiguousarray(_dop.E3),
    np.ascontiguousarray(_dop.E5),
)


@nb.njit(cache=True)
def _r4bp(kind, y, out, eps, prm):
    mu = prm[0]
    r13 = prm[1]
    wp = prm[2]
    m1 = 1.0 - mu
    x = y[0]
    yy = y[1]
    px = y[2]
    py = y[3]
    th = y[4] if kind == R4BP_STATE else y[20]
    dx1 = x + mu
    dx2 = x - 1.0 + mu
    r1s = dx1 * dx1 + yy * yy
    r2s = dx2 * dx2 + yy * yy
    inv1 = r1s ** -1.5
    inv2 = r2s ** -1.5
    out[0] = px + yy
    out[1] = py - x
    out[2] = py - m1 * dx1 * inv1 - mu * dx2 * inv2
    out[3] = -px - m1 * yy * inv1 - mu * yy * inv2
    c = np.cos(th)
    s = np.sin(th)
    d3x = x + mu - r13 * c
    d3y = yy - r13 * s
    inv3 = 0.0
    if eps != 0.0:
        r3s = d3x * d3x + d3y * d3y
        inv3 = r3s ** -1.5
        out[2] -= eps * (d3x * inv3 + c / (r13 * r13))
        out[3] -= eps * (d3y * inv3 + s / (r13 * r13))
    if kind == R4BP_STATE:
        out[4] = wp
        return
    inv15 = inv1 / r1s
    inv25 = inv2 / r2s
    hxx = m1 * (inv1 - 3 * dx1 * dx1 * inv15) + mu * (inv2 - 3 * dx2 * dx2 * inv25)
    hxy = -3 * m1 * dx1 * yy * inv15 - 3 * mu * dx2 * yy * inv25
    hyy = m1 * (inv1 - 3 * yy * yy * inv15) + mu * (inv2 - 3 * yy * yy * inv25)
    if eps != 0.0:
        inv35 = inv3 / (d3x * d3x + d3y * d3y)
        hxx += eps * (inv3 - 3 * d3x * d3x * inv35)
        hxy += -3 * eps * d3x * d3y * inv35
        hyy += eps * (inv3 - 3 * d3y * d3y * inv35)
    # Phi' = J Phi with J rows (0,1,1,0), (-1,0,0,1), (-hxx,-hxy,0,1), (-hxy,-hyy,-1,0)
    for j in range(4):
        p0 = y[4 + j]
        p1 = y[8 + j]
        p2 = y[12 + j]
        p3 = y[16 + j]
        out[4 + j] = p1 + p2
        out[8 + j] = -p0 + p3
        out[12 + j] = -hxx * p0 - hxy * p1 + p3
        out[16 + j] = -hxy * p0 - hyy * p1 - p2
    out[20] = wp


@nb.njit(cache=True)
def _pendulum(kind, y, out, eps, prm):
    wp = prm[0]
    x = y[0]
    yy = y[1]
    th = y[4] if kind == PEND_STATE else y[20]
    out[0] = y[2]
    out[1] = y[3]
    out[2] = np.sin(x)
    out[3] = -np.sin(yy)
    if eps != 0.0:
        out[3] += eps * np.sin(yy - th)
    if kind == PEND_STATE:
        out[4] = wp
        return
    a = np.cos(x)
    b = -np.cos(yy)
    if eps != 0.0:
        b += eps * np.cos(yy - th)
    for j in range(4):
        out[4 + j] = y[12 + j]
        out[8 + j] = y[16 + j]
        out[12 + j] = a * y[4 + j]
        out[16 + j] = b * y[8 + j]
    out[20] = wp


# ------------------------------------------------------------ series

@nb.njit(cache=True)
def _smul(a, b, out):
    for i in range(a.shape[0]):
        acc = 0.0
        for j in range(i + 1):
            acc += a[j] * b[i - j]
        out[i] = acc


@nb.njit(cache=True)
def _spow(f, alpha, out):
    out[0] = f[0] ** alpha
    for i in range(1, f.shape[0]):
        acc = 0.0
        for j in range(i):
            acc += (alpha * (i - j) - j) * f[i - j] * out[j]
        out[i] = acc / (i * f[0])


@nb.njit(cache=True)
def _ssin(f, s, c):
    s[0] = np.sin(f[0])
    c[0] = np.cos(f[0])
    for i in range(1, f.shape[0]):
        a = 0.0
        b = 0.0
        for j in range(1, i + 1):
            a += j * f[j] * c[i - j]
            b += j * f[j] * s[i - j]
        s[i] = a / i
        c[i] = -b / i


@nb.njit(cache=True)
def _inv_cube(dx, dy, t1, t2, out):
    # out = (dx^2 + dy^2)^(-3/2)
    _smul(dx, dx, t1)
    _smul(dy, dy, t2)
    for i in range(t1.shape[0]):
        t1[i] += t2[i]
    _spow(t1, -1.5, out)


@nb.njit(cache=True)
def _r4bp_jet(y, out, eps, prm):
    mu = prm[0]
    r13 = prm[1]
    wp = prm[2]
    m1 = 1.0 - mu
    m = (y.shape[0] - 1) // 4
    x = y[0:m]
    yy = y[m:2 * m]
    px = y[2 * m:3 * m]
    py = y[3 * m:4 * m]
    th = y[4 * m]
    dx = x.copy()
    t1 = np.empty(m)
    t2 = np.empty(m)
    inv = np.empty(m)
    prod = np.empty(m)
    for i in range(m):
        out[i] = px[i] + yy[i]
        out[m + i] = py[i] - x[i]
        out[2 * m + i] = py[i]
        out[3 * m + i] = -px[i]
    for body in range(3):
        if body == 0:
            gm = m1
            shift = mu
            shy = 0.0
        elif body == 1:
            gm = mu
            shift = mu - 1.0
            shy = 0.0
        else:
            if eps == 0.0:
                break
            gm = eps
            shift = mu - r13 * np.cos(th)
            shy = -r13 * np.sin(th)
        for i in range(m):
            dx[i] = x[i]
        dx[0] += shift
        dy = yy.copy()
        dy[0] += shy
        _inv_cube(dx, dy, t1, t2, inv)
        _smul(dx, inv, prod)
        for i in range(m):
            out[2 * m + i] -= gm * prod[i]
        _smul(dy, inv, prod)
        for i in range(m):
            out[3 * m + i] -= gm * prod[i]
    if eps != 0.0:
        out[2 * m] -= eps * np.cos(th) / (r13 * r13)
        out[3 * m] -= eps * np.sin(th) / (r13 * r13)
    out[4 * m] = wp


@nb.njit(cache=True)
def _pendulum_jet(y, out, eps, prm):
    wp = prm[0]
    m = (y.shape[0] - 1) // 4
    th = y[4 * m]
    sn = np.empty(m)
    cs = np.empty(m)
    for i in range(m):
        out[i] = y[2 * m + i]
        out[m + i] = y[3 * m + i]
    _ssin(y[0:m], sn, cs)
    for i in range(m):
        out[2 * m + i] = sn[i]
    _ssin(y[m:2 * m], sn, cs)
    for i in range(m):
        out[3 * m + i] = -sn[i]
    if eps != 0.0:
        shifted = y[m:2 * m].copy()
        shifted[0] -= th
        _ssin(shifted, sn, cs)
        for i in range(m):
            out[3 * m + i] += eps * sn[i]
    out[4 * m] = wp


@nb.njit(cache=True)
def rhs(kind, y, out, eps, prm):
    if kind == R4BP_STATE or kind == R4BP_VAR:
        _r4bp(kind, y, out, eps, prm)
    elif kind == PEND_STATE or kind == PEND_VAR:
        _pendulum(kind, y, out, eps, prm)
    elif kind == R4BP_JET:
        _r4bp_jet(y, out, eps, prm)
    else:
        _pendulum_jet(y, out, eps, prm)


@nb.njit(cache=True)
def _rms(v, scale, ctrl):
    acc = 0.0
    for i in ctrl:
        r = v[i] / scale[i]
        acc += r * r
    return np.sqrt(acc / ctrl.shape[0])


@nb.njit(cache=True)
def _row(kind, y0, ctrl, t_end, eps, prm, atol, rtol, max_steps, h_init, A, B, C, E3, E5):
    n = y0.shape[0]
    nc = ctrl.shape[0]
    ns = B.shape[0]
    y = y0.copy()
    if t_end == 0.0:
        return y, 0, 0.0
    direction = 1.0 if t_end > 0 else -1.0
    span = abs(t_end)
    K = np.empty((ns + 1, n))
    f = np.empty(n)
    rhs(kind, y, f, eps, prm)
    for i in range(n):
        if not np.isfinite(f[i]):
            return y, 2, 0.0
    # initial step
    if h_init > 0:
        h = min(h_init, span)
    else:
        scale = atol + np.abs(y) * rtol
        d0 = _rms(y, scale, ctrl)
        d1 = _rms(f, scale, ctrl)
        if d0 < 1e-5 or d1 < 1e-5:
            h0 = 1e-6
        else:
            h0 = 0.01 * d0 / d1
        h0 = min(h0, span)
        y1 = y + direction * h0 * f
        f1 = np.empty(n)
        rhs(kind, y1, f1, eps, prm)
        d2 = _rms(f1 - f, scale, ctrl) / h0
        dm = max(d1, d2)
        if dm <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / dm) ** (1.0 / 8.0)
        h = min(100 * h0, h1, span)
    t = 0.0
    steps = 0
    rejected = False
    ytmp = np.empty(n)
    ynew = np.empty(n)
    fnew = np.empty(n)
    scale = np.empty(n)
    while True:
        remaining = abs(t_end - t)
        last = h >= remaining
        if last:
            h = remaining
        hs = direction * h
        for i in range(n):
            K[0, i] = f[i]
        for s in range(1, ns):
            for i in range(n):
                acc = 0.0
                for j in range(s):
                    acc += A[s, j] * K[j, i]
                ytmp[i] = y[i] + hs * acc
            rhs(kind, ytmp, K[s], eps, prm)
        for i in range(n):
            acc = 0.0
            for j in range(ns):
                acc += B[j] * K[j, i]
            ynew[i] = y[i] + hs * acc
        rhs(kind, ynew, fnew, eps, prm)
        for i in range(n):
            K[ns, i] = fnew[i]
        e5 = 0.0
        e3 = 0.0
        finite = True
        for i in range(n):
            if not np.isfinite(ynew[i]):
                finite = False
        for i in ctrl:
            sc = atol + max(abs(y[i]), abs(ynew[i])) * rtol
            a5 = 0.0
            a3 = 0.0
            for j in range(ns + 1):
                a5 += E5[j] * K[j, i]
                a3 += E3[j] * K[j, i]
            a5 /= sc
            a3 /= sc
            e5 += a5 * a5
            e3 += a3 * a3
        denom = e5 + 0.01 * e3
        if denom > 0:
            err = h * e5 / np.sqrt(denom * nc)
        else:
            err = 0.0
        if not finite or not np.isfinite(err):
            err = np.inf
        steps += 1
        if steps > max_steps:
            return y, 1, t
        if err < 1.0:
            t = t_end if last else t + hs
            for i in range(n):
                y[i] = ynew[i]
                f[i] = fnew[i]
            if last:
                return y, 0, t
            if err == 0.0:
                factor = 10.0
            else:
                factor = min(10.0, 0.9 * err ** (-1.0 / 8.0))
            if rejected:
                factor = min(1.0, factor)
            h *= factor
            rejected = False
            continue
        rejected = True
        if np.isfinite(err):
            h *= max(0.2, 0.9 * err ** (-1.0 / 8.0))
        else:
            h *= 0.2
        if h < 10 * np.spacing(max(abs(t), 1.0)):
            return y, 2, t


@nb.njit(cache=True)
def integrate_rows(kind, Y0, ctrl, t_end, eps, prm, atol, rtol, max_steps, h_init, A, B, C, E3, E5):
    """Integrate every row of ``Y0`` independently; status 0 ok, 1 step limit, 2 breakdown.

    Only the entries listed in ``ctrl`` enter the local error estimate.
    """
    nb_rows = Y0.shape[0]
    out = np.empty_like(Y0)
    status = np.zeros(nb_rows, dtype=np.int64)
    t_last = np.zeros(nb_rows)
    for r in range(nb_rows):
        y, st, tl = _row(kind, Y0[r], ctrl, t_end, eps, prm, atol, rtol, max_steps, h_init,
                         A, B, C, E3, E5)
        out[r] = y
        status[r] = st
        t_last[r] = tl
    return out, status, t_last
