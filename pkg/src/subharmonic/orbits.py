"""Resonant flow-periodic seed orbits for the unperturbed systems."""

from __future__ import annotations

from math import pi, sin

import numpy as np
from scipy.optimize import brentq
from scipy.special import ellipk

from .integrate import DEFAULT_CONFIG, flow_with_variational
from .systems import ResonanceLabel

__all__ = [
    "OrbitNotFoundError",
    "SymmetricOrbit",
    "pendulum_libration_period",
    "pendulum_resonant_seed",
    "symmetric_periodic_orbit",
    "resonant_symmetric_orbit",
    "symmetric_phase_candidates",
]


class OrbitNotFoundError(RuntimeError):
    pass


def _label(label):
    return label if isinstance(label, ResonanceLabel) else ResonanceLabel.parse(label)


# ---------------------------------------------------------------- pendulum

def pendulum_libration_period(amplitude):
    """Period ``4 K(sin^2(A/2))`` of the pendulum ``y'' = -sin y``."""
    if not 0 < amplitude < pi:
        raise ValueError("libration amplitude must lie in (0, pi)")
    return 4.0 * float(ellipk(sin(0.5 * amplitude) ** 2))


def pendulum_resonant_seed(system, label, *, sign=1.0):
    """Libration in ``x = px = 0`` whose period is ``q T_p / p``.

    Returns the point ``(0, 0, 0, +-py0)`` on the ``y = 0`` crossing and the
    libration amplitude.
    """
    label = _label(label)
    target = label.q * system.period / label.p
    if target <= 2 * pi:
        raise OrbitNotFoundError(
            f"librations have period > 2 pi; {label} asks for {target:.6g}")
    amp = brentq(lambda a: pendulum_libration_period(a) - target, 1e-6, pi - 1e-12,
                 xtol=1e-15, rtol=1e-15, maxiter=200)
    py0 = 2.0 * sin(0.5 * amp)
    return np.array([0.0, 0.0, 0.0, sign * py0]), amp


# ----------------------------------------------------------- 3-body family

class SymmetricOrbit:
    """A periodic orbit crossing the x-axis perpendicularly at ``x0``.

    Attributes: ``x0`` (start state), ``period``, ``half_state`` (the second
    perpendicular crossing reached at ``period / 2``).
    """

    def __init__(self, x0, period, half_state):
        self.x0 = np.asarray(x0, dtype=float)
        self.period = float(period)
        self.half_state = np.asarray(half_state, dtype=float)

    def __repr__(self):
        return f"SymmetricOrbit(x0={self.x0.tolist()}, period={self.period:.12g})"


def symmetric_periodic_orbit(system, x0, py_guess, half_period_guess, *, tol=1e-12,
                             max_iter=30, cfg=DEFAULT_CONFIG):
    """Newton on ``(py0, tau)`` so that ``y(tau) = px(tau) = 0`` from ``(x0, 0, 0, py0)``.

    Uses the unperturbed field (``eps = 0``) of ``system``.
    """
    py, tau = float(py_guess), float(half_period_guess)
    for _ in range(max_iter):
        st, DF = flow_with_variational(system, 0.0, np.array([x0, 0.0, 0.0, py]), 0.0, tau, cfg)
        f = system.rhs(st, 0.0, 0.0)
        r = np.array([st[1], st[2]])
        if np.max(np.abs(r)) < tol:
            return SymmetricOrbit([x0, 0.0, 0.0, py], 2 * tau, st)
        Jm = np.array([[DF[1, 3], f[1]], [DF[2, 3], f[2]]])
        d = np.linalg.solve(Jm, -r)
        py += d[0]
        tau += d[1]
    raise OrbitNotFoundError(f"no symmetric orbit through x0={x0} (residual {np.abs(r).max():.3e})")


def resonant_symmetric_orbit(system, label, x_bracket, py_guess, half_period_guess, *,
                             forcing_period=None, cfg=DEFAULT_CONFIG, xtol=1e-13):
    """Member of a symmetric family with period ``q T_p / p``.

    The family is followed in ``x0`` across ``x_bracket`` and the period
    condition is solved by Brent's method.
    """
    label = _label(label)
    tp = system.period if forcing_period is None else forcing_period
    target = label.q * tp / label.p
    state = {"py": py_guess, "tau": half_period_guess}

    def g(x0):
        orb = symmetric_periodic_orbit(system, x0, state["py"], state["tau"], cfg=cfg)
        state["py"], state["tau"] = orb.x0[3], orb.period / 2
        return orb.period - target

    lo, hi = x_bracket
    glo, ghi = g(lo), g(hi)
    if glo * ghi > 0:
        raise OrbitNotFoundError(
            f"period {target:.9g} not bracketed on [{lo}, {hi}] (offsets {glo:.3e}, {ghi:.3e})")
    x0 = brentq(g, lo, hi, xtol=xtol, rtol=1e-15)
    return symmetric_periodic_orbit(system, x0, state["py"], state["tau"], cfg=cfg)


def symmetric_phase_candidates(orbit):
    """The four reversible seeds ``(point, theta0)`` of a symmetric orbit.

    Both perpendicular x-axis crossings, each with forcing phase 0 and pi.
    """
    return [(orbit.x0, 0.0), (orbit.x0, pi), (orbit.half_state, 0.0), (orbit.half_state, pi)]
