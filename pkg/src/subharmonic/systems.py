"""Hamiltonian models: PCR3BP, planar concentric CR4BP, forced pendulum.

Each vector field is written once in terms of ``+ - * /``, ``**`` and the
``sin``/``cos`` dispatchers from :mod:`subharmonic.taylor`, so the same code
runs on float arrays (plain and variational flows) and on truncated series
(jet transport).

State ordering is ``(x, y, px, py)``; the perturbation phase ``theta`` is
carried separately and advances at the constant rate ``omega_p``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import gcd, pi, sqrt

import numpy as np

from .taylor import TruncatedSeries, cos, sin

__all__ = [
    "SystemModel",
    "ResonanceLabel",
    "pcr3bp",
    "ccr4bp",
    "forced_pendulum_test",
    "jupiter_europa_ganymede",
    "kepler_rate",
    "kepler_radius",
    "J4",
    "MU_JUPITER_GANYMEDE",
    "MU_URANUS_OBERON",
    "EPS_EUROPA",
    "EPS_TITANIA",
    "TP_EUROPA",
]

MU_JUPITER_GANYMEDE = 7.8037e-5
MU_URANUS_OBERON = 3.5433e-5
EPS_EUROPA = 2.5265e-5
EPS_TITANIA = 3.9168e-5
TP_EUROPA = 6.1966   # Europa forcing period in Jupiter-Ganymede units

J4 = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])


@dataclass(frozen=True)
class ResonanceLabel:
    """Rotation number ``omega = 2 pi p / q``."""

    p: int
    q: int

    def __post_init__(self):
        if self.p <= 0 or self.q <= 0:
            raise ValueError("p and q must be positive")
        if gcd(self.p, self.q) != 1:
            raise ValueError(f"{self.p}/{self.q} is not in lowest terms")
        if self.p >= self.q:
            raise ValueError("need p < q so that omega lies in (0, 2 pi)")

    @property
    def omega(self):
        return 2 * pi * self.p / self.q

    def __str__(self):
        return f"{self.p}/{self.q}"

    @classmethod
    def parse(cls, text):
        p, q = str(text).split("/")
        return cls(int(p), int(q))


@dataclass(frozen=True)
class SystemModel:
    """A (possibly periodically forced) 2-DOF Hamiltonian system.

    ``field(x, y, px, py, theta, eps)`` returns the four components of
    ``J grad H``; ``jacobian(state, theta, eps)`` returns the 4x4 state
    Jacobian and the derivative with respect to ``theta``. ``kernel`` names
    an optional compiled equivalent ``(family, params, uses_eps)``.
    """

    name: str
    params: dict
    omega_p: float
    _field: object = field(repr=False)
    _jacobian: object = field(repr=False)
    _hamiltonian: object = field(repr=False)
    kernel: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def period(self):
        """Forcing period ``2 pi / |omega_p|``."""
        return 2 * pi / abs(self.omega_p)

    def rhs(self, state, theta, eps):
        state = np.asarray(state, dtype=float)
        x, y, px, py = (state[..., i] for i in range(4))
        comps = self._field(x, y, px, py, np.asarray(theta, dtype=float), eps)
        return np.stack(np.broadcast_arrays(*comps), axis=-1)

    def rhs_jacobian(self, state, theta, eps):
        state = np.asarray(state, dtype=float)
        return self._jacobian(state, np.asarray(theta, dtype=float), eps)

    def rhs_jet(self, comps, theta, eps):
        """Series-valued field; ``comps`` are four :class:`TruncatedSeries`."""
        x, y, px, py = comps
        out = self._field(x, y, px, py, theta, eps)
        deg = x.degree
        res = []
        for c in out:
            if not isinstance(c, TruncatedSeries):
                z = np.zeros(np.shape(c) + (deg + 1,))
                z[..., 0] = c
                c = TruncatedSeries(z)
            res.append(c)
        return res

    def hamiltonian(self, state, theta, eps):
        state = np.asarray(state, dtype=float)
        x, y, px, py = (state[..., i] for i in range(4))
        return self._hamiltonian(x, y, px, py, np.asarray(theta, dtype=float), eps)


# ---------------------------------------------------------------- 3/4-body

def _primaries(x, y, mu):
    dx1 = x + mu
    dx2 = x - 1.0 + mu
    y2 = y * y
    inv1 = (dx1 * dx1 + y2) ** -1.5
    inv2 = (dx2 * dx2 + y2) ** -1.5
    return dx1, dx2, inv1, inv2


def _r4bp_field(mu, r13):
    m1 = 1.0 - mu
    r13sq = r13 * r13

    def fld(x, y, px, py, theta, eps):
        dx1, dx2, inv1, inv2 = _primaries(x, y, mu)
        xdot = px + y
        ydot = py - x
        pxdot = py - m1 * dx1 * inv1 - mu * dx2 * inv2
        pydot = -px - m1 * y * inv1 - mu * y * inv2
        if eps != 0:
            c = cos(theta)
            s = sin(theta)
            d3x = x + mu - r13 * c
            d3y = y - r13 * s
            inv3 = (d3x * d3x + d3y * d3y) ** -1.5
            pxdot = pxdot - eps * (d3x * inv3 + c / r13sq)
            pydot = pydot - eps * (d3y * inv3 + s / r13sq)
        return xdot, ydot, pxdot, pydot

    return fld


def _point_mass_hessian(m, dx, dy):
    r2 = dx * dx + dy * dy
    inv3 = r2 ** -1.5
    inv5 = inv3 / r2
    hxx = m * (inv3 - 3 * dx * dx * inv5)
    hxy = -3 * m * dx * dy * inv5
    hyy = m * (inv3 - 3 * dy * dy * inv5)
    return hxx, hxy, hyy


def _r4bp_jacobian(mu, r13):
    m1 = 1.0 - mu

    def jac(state, theta, eps):
        x, y = state[..., 0], state[..., 1]
        a = _point_mass_hessian(m1, x + mu, y)
        b = _point_mass_hessian(mu, x - 1.0 + mu, y)
        hxx, hxy, hyy = (a[i] + b[i] for i in range(3))
        dth = np.zeros(state.shape)
        if eps != 0:
            c = np.cos(theta)
            s = np.sin(theta)
            d3x = x + mu - r13 * c
            d3y = y - r13 * s
            h3 = _point_mass_hessian(eps, d3x, d3y)
            hxx, hxy, hyy = hxx + h3[0], hxy + h3[1], hyy + h3[2]
            # d/dtheta of -eps*(d3 r3^-3 + e/r13^2), with d(d3x)/dth = r13 s, d(d3y)/dth = -r13 c
            ddx, ddy = r13 * s, -r13 * c
            dth[..., 2] = -(h3[0] * ddx + h3[1] * ddy) + eps * s / r13 ** 2
            dth[..., 3] = -(h3[1] * ddx + h3[2] * ddy) - eps * c / r13 ** 2
        J = np.zeros(state.shape[:-1] + (4, 4))
        J[..., 0, 1] = 1.0
        J[..., 0, 2] = 1.0
        J[..., 1, 0] = -1.0
        J[..., 1, 3] = 1.0
        J[..., 2, 0] = -hxx
        J[..., 2, 1] = -hxy
        J[..., 2, 3] = 1.0
        J[..., 3, 0] = -hxy
        J[..., 3, 1] = -hyy
        J[..., 3, 2] = -1.0
        return J, dth

    return jac


def _r4bp_hamiltonian(mu, r13):
    m1 = 1.0 - mu

    def ham(x, y, px, py, theta, eps):
        r1 = np.sqrt((x + mu) ** 2 + y ** 2)
        r2 = np.sqrt((x - 1.0 + mu) ** 2 + y ** 2)
        h = 0.5 * (px * px + py * py) + px * y - py * x - m1 / r1 - mu / r2
        if eps != 0:
            c, s = np.cos(theta), np.sin(theta)
            r3 = np.sqrt((x + mu - r13 * c) ** 2 + (y - r13 * s) ** 2)
            h = h + eps * (-1.0 / r3 + (x * c + y * s) / r13 ** 2)
        return h

    return ham


def pcr3bp(mu):
    """Planar circular restricted three-body problem (``eps`` is ignored)."""
    if not 0 < mu < 0.5:
        raise ValueError(f"mass ratio must lie in (0, 1/2), got {mu}")
    fld = _r4bp_field(mu, 1.0)
    jac = _r4bp_jacobian(mu, 1.0)
    ham = _r4bp_hamiltonian(mu, 1.0)
    return SystemModel(
        "pcr3bp", {"mu": mu}, 0.0,
        lambda x, y, px, py, th, eps: fld(x, y, px, py, th, 0),
        lambda st, th, eps: jac(st, th, 0),
        lambda x, y, px, py, th, eps: ham(x, y, px, py, th, 0),
        kernel=("r4bp", (mu, 1.0, 0.0), False),
    )


def kepler_rate(mu, eps, r13):
    """Angular rate of a third mass on a circle of radius ``r13`` about ``m1``."""
    return sqrt((1.0 - mu + eps) / r13 ** 3)


def kepler_radius(mu, eps, omega3):
    """Inverse of :func:`kepler_rate`."""
    return ((1.0 - mu + eps) / omega3 ** 2) ** (1.0 / 3.0)


def ccr4bp(mu, r13, omega3):
    """Planar concentric circular restricted four-body problem.

    The third mass circles ``m1`` at radius ``r13`` with inertial rate
    ``omega3``; in the rotating frame its phase advances at ``omega3 - 1``.
    The perturbation size is the ``eps`` passed to the field.
    """
    if not 0 < mu < 0.5:
        raise ValueError(f"mass ratio must lie in (0, 1/2), got {mu}")
    if r13 <= 0:
        raise ValueError("r13 must be positive")
    if omega3 <= 0 or omega3 == 1.0:
        raise ValueError("omega3 must be positive and differ from 1")
    return SystemModel(
        "ccr4bp", {"mu": mu, "r13": r13, "omega3": omega3}, omega3 - 1.0,
        _r4bp_field(mu, r13), _r4bp_jacobian(mu, r13), _r4bp_hamiltonian(mu, r13),
        kernel=("r4bp", (mu, r13, omega3 - 1.0), True),
    )


def jupiter_europa_ganymede(period=TP_EUROPA):
    """CCR4BP in Jupiter-Ganymede units with Europa as the third mass.

    The rotating-frame forcing period is pinned to ``period`` and the radius
    follows from Kepler's law at Europa's mass ratio.
    """
    omega3 = 1.0 + 2 * pi / period
    return ccr4bp(MU_JUPITER_GANYMEDE, kepler_radius(MU_JUPITER_GANYMEDE, EPS_EUROPA, omega3), omega3)


# ---------------------------------------------------------------- pendulum

def _pendulum_field(x, y, px, py, theta, eps):
    pydot = -sin(y)
    if eps != 0:
        pydot = pydot + eps * sin(y - theta)
    return px, py, sin(x), pydot


def _pendulum_jacobian(state, theta, eps):
    x, y = state[..., 0], state[..., 1]
    J = np.zeros(state.shape[:-1] + (4, 4))
    J[..., 0, 2] = 1.0
    J[..., 1, 3] = 1.0
    J[..., 2, 0] = np.cos(x)
    J[..., 3, 1] = -np.cos(y)
    dth = np.zeros(state.shape)
    if eps != 0:
        J[..., 3, 1] += eps * np.cos(y - theta)
        dth[..., 3] = -eps * np.cos(y - theta)
    return J, dth


def _pendulum_hamiltonian(x, y, px, py, theta, eps):
    h = 0.5 * px * px + np.cos(x) + 0.5 * py * py - np.cos(y)
    if eps != 0:
        h = h + eps * np.cos(y - theta)
    return h


def forced_pendulum_test(omega_p=2.5):
    """Saddle in ``(x, px)`` times a pendulum libration in ``(y, py)``.

    ``H0 = px^2/2 + cos x + py^2/2 - cos y`` and ``H1 = eps cos(y - theta)``.
    The plane ``x = px = 0`` is invariant for every ``eps`` and is filled by
    the librations, whose period grows with amplitude.
    """
    return SystemModel("forced_pendulum", {"omega_p": omega_p}, omega_p,
                       _pendulum_field, _pendulum_jacobian, _pendulum_hamiltonian,
                       kernel=("pendulum", (omega_p,), True))
