"""Adaptive Dormand-Prince 8(5,3) propagation of states, Jacobians and jets.

All trajectories of a batch advance with one shared step sequence; the
step is accepted only when every row passes the error test. The phase
``theta`` rides along as the last column of the integrated state.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate._ivp import dop853_coefficients as _dop

from .taylor import TruncatedSeries, TruncatedSeriesVector

__all__ = [
    "IntegratorConfig",
    "IntegrationError",
    "integrate_batch",
    "flow",
    "flow_with_variational",
    "jet_flow",
    "StroboscopicMap",
    "strobe",
    "strobe_jacobian",
    "strobe_jet",
]

_NS = _dop.N_STAGES
_A = _dop.A[:_NS, :_NS]
_B = _dop.B
_C = _dop.C[:_NS]
_E3 = _dop.E3
_E5 = _dop.E5

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_EXPONENT = -1.0 / 8.0


@dataclass(frozen=True)
class IntegratorConfig:
    abs_tol: float = 1e-12
    rel_tol: float = 1e-12
    max_steps: int = 100_000
    initial_step: float | None = None
    compiled: bool = True

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")


DEFAULT_CONFIG = IntegratorConfig()


class IntegrationError(RuntimeError):
    """Raised when the step count is exhausted or the state stops being finite."""

    def __init__(self, msg, t_last):
        super().__init__(f"{msg} (last good time {t_last:.17g})")
        self.t_last = t_last


def _initial_step(fun, t0, y0, f0, direction, span, cfg, ctrl):
    if cfg.initial_step is not None:
        return min(abs(cfg.initial_step), span)
    n = len(ctrl)
    scale = cfg.abs_tol + np.abs(y0[:, ctrl]) * cfg.rel_tol
    d0 = np.sqrt(np.sum((y0[:, ctrl] / scale) ** 2, axis=1) / n)
    d1 = np.sqrt(np.sum((f0[:, ctrl] / scale) ** 2, axis=1) / n)
    h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / np.maximum(d1, 1e-300))
    h0 = float(np.min(h0))
    h0 = min(h0, span)
    y1 = y0 + direction * h0 * f0
    f1 = fun(t0 + direction * h0, y1)
    d2 = np.sqrt(np.sum(((f1 - f0)[:, ctrl] / scale) ** 2, axis=1) / n) / h0
    dm = float(np.max(np.maximum(d1, d2)))
    if dm <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / dm) ** (1.0 / 8.0)
    return min(100 * h0, h1, span)


def integrate_batch(fun, t0, y0, t_end, cfg=DEFAULT_CONFIG, *, mask_nonfinite=False, ctrl=None):
    """Integrate ``y' = fun(t, y)`` for a batch ``y0`` of shape ``(B, n)``.

    ``ctrl`` lists the columns that enter the local error estimate (default
    all of them).

    With ``mask_nonfinite`` rows that blow up (or demand a step below
    ``1e-12`` of the span) are set to NaN and dropped instead of aborting
    the whole batch.
    """
    y = np.array(y0, dtype=float, copy=True)
    if y.ndim != 2:
        raise ValueError("y0 must be two-dimensional (batch, n)")
    t0 = float(t0)
    t_end = float(t_end)
    if t_end == t0 or y.shape[0] == 0:
        return y
    direction = 1.0 if t_end > t0 else -1.0
    span = abs(t_end - t0)
    alive = np.ones(y.shape[0], dtype=bool)

    def f_alive(t, yy):
        if alive.all():
            return fun(t, yy)
        out = np.full_like(yy, np.nan)
        out[alive] = fun(t, yy[alive])
        return out

    f = f_alive(t0, y)
    if not np.all(np.isfinite(f[alive])):
        if not mask_nonfinite:
            raise IntegrationError("non-finite derivative at the initial state", t0)
        bad = ~np.all(np.isfinite(f), axis=1)
        alive &= ~bad
        y[bad] = np.nan
        if not alive.any():
            return y
    ctrl = np.arange(y.shape[1]) if ctrl is None else np.asarray(ctrl)
    h = _initial_step(lambda t, yy: f_alive(t, yy)[alive], t0,
                      y[alive], f[alive], direction, span, cfg, ctrl)
    h_min_mask = 1e-12 * span
    t = t0
    K = np.empty((_NS + 1,) + y.shape)
    steps = 0
    rejected = False
    while True:
        remaining = abs(t_end - t)
        last = h >= remaining
        if last:
            h = remaining
        hs = direction * h
        K[0] = f
        for s in range(1, _NS):
            dy = np.tensordot(_A[s, :s], K[:s], axes=(0, 0)) * hs
            K[s] = f_alive(t + _C[s] * hs, y + dy)
        y_new = y + hs * np.tensordot(_B, K[:_NS], axes=(0, 0))
        t_new = t_end if last else t + hs
        f_new = f_alive(t_new, y_new)
        K[_NS] = f_new
        scale = cfg.abs_tol + np.maximum(np.abs(y[:, ctrl]), np.abs(y_new[:, ctrl])) * cfg.rel_tol
        err5 = np.tensordot(_E5, K[:, :, ctrl], axes=(0, 0)) / scale
        err3 = np.tensordot(_E3, K[:, :, ctrl], axes=(0, 0)) / scale
        e5 = np.sum(err5 ** 2, axis=1)
        e3 = np.sum(err3 ** 2, axis=1)
        denom = e5 + 0.01 * e3
        with np.errstate(invalid="ignore", divide="ignore"):
            err = np.where(denom > 0, h * e5 / np.sqrt(denom * len(ctrl)), 0.0)
        ok_rows = np.isfinite(err) & np.all(np.isfinite(y_new), axis=1)
        err = np.where(ok_rows, err, np.inf)
        err[~alive] = 0.0
        err_max = float(err.max())
        steps += 1
        if steps > cfg.max_steps:
            raise IntegrationError(f"step limit {cfg.max_steps} reached", t)
        if err_max < 1.0:
            y, f, t = y_new, f_new, t_new
            if last:
                return y
            factor = _MAX_FACTOR if err_max == 0 else min(_MAX_FACTOR, _SAFETY * err_max ** _EXPONENT)
            if rejected:
                factor = min(1.0, factor)
            h *= factor
            rejected = False
            continue
        rejected = True
        if np.isfinite(err_max):
            h *= max(_MIN_FACTOR, _SAFETY * err_max ** _EXPONENT)
        else:
            h *= _MIN_FACTOR
        if mask_nonfinite and h < h_min_mask:
            bad = alive & (err >= 1.0)
            alive &= ~bad
            y[bad] = np.nan
            f[bad] = np.nan
            if not alive.any():
                return y
            h = h_min_mask * 10
            rejected = False
            continue
        if h < 10 * np.spacing(max(abs(t), 1.0)):
            raise IntegrationError("step size underflow (near-singular state?)", t)


# -------------------------------------------------------------- wrappers

_KINDS = {"r4bp": (0, 1, 4), "pendulum": (2, 3, 5)}


def _compiled(system, cfg):
    if not cfg.compiled or getattr(system, "kernel", None) is None:
        return None
    try:
        from . import _kernels
    except ImportError:  # numba missing
        return None
    return _kernels


def _run_compiled(kern, system, eps, y0, t, cfg, mode, mask_nonfinite, ctrl=None):
    family, prm, uses_eps = system.kernel
    kind = _KINDS[family][mode]
    ctrl = np.arange(y0.shape[1]) if ctrl is None else ctrl
    y, status, t_last = kern.integrate_rows(
        kind, np.ascontiguousarray(y0, dtype=float), np.asarray(ctrl, dtype=np.int64), float(t), float(eps) if uses_eps else 0.0,
        np.asarray(prm, dtype=float), cfg.abs_tol, cfg.rel_tol, cfg.max_steps,
        0.0 if cfg.initial_step is None else abs(cfg.initial_step), *kern.TABLEAU)
    bad = status != 0
    if bad.any():
        if not mask_nonfinite:
            i = int(np.argmax(bad))
            what = f"step limit {cfg.max_steps} reached" if status[i] == 1 else \
                "step size underflow (near-singular state?)"
            raise IntegrationError(what, float(t_last[i]))
        y[bad] = np.nan
    return y

def _batch(x, last):
    x = np.asarray(x, dtype=float)
    lead = x.shape[: x.ndim - last]
    return x.reshape((-1,) + x.shape[x.ndim - last:]), lead


def flow(system, eps, x0, theta0, t, cfg=DEFAULT_CONFIG, *, mask_nonfinite=False):
    """Advance states ``x0`` (shape ``(..., 4)``) by time ``t``."""
    xs, lead = _batch(x0, 1)
    th = np.broadcast_to(np.asarray(theta0, dtype=float), lead).reshape(-1)
    y0 = np.column_stack([xs, th])
    kern = _compiled(system, cfg)
    if kern is not None:
        y = _run_compiled(kern, system, eps, y0, t, cfg, 0, mask_nonfinite)
        return y[:, :4].reshape(lead + (4,))
    wp = system.omega_p

    def fun(_, y):
        out = np.empty_like(y)
        out[:, :4] = system.rhs(y[:, :4], y[:, 4], eps)
        out[:, 4] = wp
        return out

    y = integrate_batch(fun, 0.0, y0, t, cfg, mask_nonfinite=mask_nonfinite)
    return y[:, :4].reshape(lead + (4,))


def flow_with_variational(system, eps, x0, theta0, t, cfg=DEFAULT_CONFIG):
    """Advance states together with the 4x4 Jacobian of the time-``t`` flow."""
    xs, lead = _batch(x0, 1)
    nb = xs.shape[0]
    th = np.broadcast_to(np.asarray(theta0, dtype=float), lead).reshape(-1)
    y0 = np.column_stack([xs, np.tile(np.eye(4).reshape(1, 16), (nb, 1)), th])
    kern = _compiled(system, cfg)
    if kern is not None:
        y = _run_compiled(kern, system, eps, y0, t, cfg, 1, False)
        return y[:, :4].reshape(lead + (4,)), y[:, 4:20].reshape(lead + (4, 4))
    wp = system.omega_p

    def fun(_, y):
        out = np.empty_like(y)
        st = y[:, :4]
        th_ = y[:, 20]
        out[:, :4] = system.rhs(st, th_, eps)
        J, _dth = system.rhs_jacobian(st, th_, eps)
        out[:, 4:20] = np.matmul(J, y[:, 4:20].reshape(-1, 4, 4)).reshape(-1, 16)
        out[:, 20] = wp
        return out

    y = integrate_batch(fun, 0.0, y0, t, cfg)
    return y[:, :4].reshape(lead + (4,)), y[:, 4:20].reshape(lead + (4, 4))


def jet_flow(system, eps, V0, theta0, t, cfg=DEFAULT_CONFIG, *, mask_nonfinite=False):
    """Transport degree-``d`` series initial conditions through the flow.

    ``V0`` is a :class:`TruncatedSeriesVector` or an array of shape
    ``(..., 4, d + 1)``; the result has the same type and shape.
    """
    as_vector = isinstance(V0, TruncatedSeriesVector)
    c0 = np.asarray(V0.coeffs if as_vector else V0, dtype=float)
    cs, lead = _batch(c0, 2)
    nb, _, n = cs.shape
    th = np.broadcast_to(np.asarray(theta0, dtype=float), lead).reshape(-1)
    y0 = np.column_stack([cs.reshape(nb, 4 * n), th])
    m = 4 * n
    # steps are chosen from the reference trajectory alone, so the step
    # sequence (and every coefficient up to d) is the same at any degree
    ctrl = np.append(np.arange(4) * n, m)
    kern = _compiled(system, cfg)
    if kern is not None:
        y = _run_compiled(kern, system, eps, y0, t, cfg, 2, mask_nonfinite, ctrl)
        out = y[:, :m].reshape(lead + (4, n))
        return TruncatedSeriesVector(out) if as_vector else out
    wp = system.omega_p

    def fun(_, y):
        out = np.empty_like(y)
        c = y[:, :m].reshape(-1, 4, n)
        comps = [TruncatedSeries(c[:, i, :]) for i in range(4)]
        res = system.rhs_jet(comps, y[:, m], eps)
        out[:, :m] = np.stack([r.coeffs for r in res], axis=1).reshape(-1, m)
        out[:, m] = wp
        return out

    y = integrate_batch(fun, 0.0, y0, t, cfg, mask_nonfinite=mask_nonfinite, ctrl=ctrl)
    out = y[:, :m].reshape(lead + (4, n))
    return TruncatedSeriesVector(out) if as_vector else out


@dataclass(frozen=True)
class StroboscopicMap:
    """Time-``T_p`` map of a forced system on the section ``theta = theta0``."""

    system: object
    eps: float = 0.0
    theta0: float = 0.0
    cfg: IntegratorConfig = DEFAULT_CONFIG

    kind = "flow"

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.system.omega_p == 0:
            raise ValueError("system has no forcing frequency")

    @property
    def period(self):
        return self.system.period

    def at(self, eps):
        return replace(self, eps=float(eps))

    def evaluate(self, X, *, mask_nonfinite=False):
        return flow(self.system, self.eps, X, self.theta0, self.period, self.cfg,
                    mask_nonfinite=mask_nonfinite)

    def evaluate_with_jacobian(self, X):
        return flow_with_variational(self.system, self.eps, X, self.theta0, self.period, self.cfg)

    def evaluate_jet(self, W, *, mask_nonfinite=False):
        return jet_flow(self.system, self.eps, W, self.theta0, self.period, self.cfg,
                        mask_nonfinite=mask_nonfinite)

    def unperturbed_points(self, x0, times):
        """``flow_0(x0, t)`` for each ``t`` in ``times`` along one trajectory."""
        times = np.asarray(times, dtype=float)
        order = np.argsort(times)
        out = np.empty((times.size, 4))
        x = np.asarray(x0, dtype=float)
        t = 0.0
        for i in order:
            x = flow(self.system, 0.0, x, self.theta0, times[i] - t, self.cfg)
            t = times[i]
            out[i] = x
        return out

    def tangent(self, X):
        """Flow vector at ``X`` (the unperturbed torus tangent)."""
        return self.system.rhs(X, self.theta0, 0.0)


def strobe(smap, x):
    return smap.evaluate(x)


def strobe_jacobian(smap, x):
    return smap.evaluate_with_jacobian(x)


def strobe_jet(smap, V):
    return smap.evaluate_jet(V)
