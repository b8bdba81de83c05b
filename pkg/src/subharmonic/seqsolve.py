"""Cyclic scalar sequence equations.

Everything here solves, for ``k = 0..q-1``,

    lam_a(k) u(k) - lam_b(k) u(k+1 mod q) = b(k)

in one of its regimes. The index ``k`` is always axis 0; extra trailing
axes of ``b`` are independent right-hand sides solved together.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SequenceSolveError",
    "RegimeError",
    "SequenceNonConvergenceError",
    "DegenerateResonanceError",
    "ZeroSumError",
    "SolverThresholds",
    "RescaleResult",
    "residual",
    "solve_contracting",
    "solve_unit_modulus",
    "solve_constant",
    "solve_cohomological",
    "solve_auto",
    "rescale_constant",
]


class SequenceSolveError(ArithmeticError):
    pass


class RegimeError(SequenceSolveError):
    pass


class SequenceNonConvergenceError(SequenceSolveError):
    def __init__(self, msg, contraction):
        super().__init__(msg)
        self.contraction = contraction


class DegenerateResonanceError(SequenceSolveError):
    pass


class ZeroSumError(SequenceSolveError):
    def __init__(self, msg, total):
        super().__init__(msg)
        self.total = total


@dataclass(frozen=True)
class SolverThresholds:
    """Classification knobs for :func:`solve_auto`."""

    constant_rtol: float = 0.0      # lam(k) counts as constant if spread <= this * |lam|
    unit_rtol: float = 1e-12        # |lam_b/lam_a| within this of 1 -> unit modulus
    equal_rtol: float = 1e-15       # lam_a == lam_b -> cohomological
    max_sweeps: int = 10_000
    stop_rtol: float = 1e-14


DEFAULT_THRESHOLDS = SolverThresholds()


def _expand(lam, b):
    lam = np.asarray(lam)
    if lam.ndim == 0:
        return np.broadcast_to(lam, b.shape)
    if lam.shape[0] != b.shape[0]:
        raise ValueError(f"multiplier length {lam.shape[0]} != sequence length {b.shape[0]}")
    return np.broadcast_to(lam.reshape(lam.shape + (1,) * (b.ndim - lam.ndim)), b.shape)


def _prep(lam_a, lam_b, b):
    b = np.asarray(b)
    if b.ndim == 0:
        raise ValueError("b must be a sequence")
    la = _expand(lam_a, b)
    lb = _expand(lam_b, b)
    if np.any(lb == 0):
        raise ValueError("lam_b must be nonzero")
    dtype = np.result_type(la, lb, b, float)
    return la.astype(dtype), lb.astype(dtype), b.astype(dtype)


def residual(lam_a, lam_b, b, u):
    """``lam_a u - lam_b u(+1) - b`` elementwise."""
    la, lb, b = _prep(lam_a, lam_b, b)
    u = np.asarray(u)
    return la * u - lb * np.roll(u, -1, axis=0) - b


def solve_contracting(lam_a, lam_b, b, *, thresholds=DEFAULT_THRESHOLDS, history=None):
    """Fixed-point iteration from ``u = 0``.

    With every ``|lam_a/lam_b| < 1`` the forward map
    ``u(k) = [lam_a u - b](k-1) / lam_b(k-1)`` is iterated; with every ratio
    above 1 the backward map ``u(k) = [b + lam_b u(k+1)](k) / lam_a(k)``.
    Each sweep updates all ``k`` from the previous sweep, so the sup-norm of
    successive differences shrinks at least by the contraction factor.

    If ``history`` is a list, the sup-norm of every successive difference is
    appended to it.
    """
    la, lb, b = _prep(lam_a, lam_b, b)
    if np.any(la == 0) and not np.all(np.abs(la) < np.abs(lb)):
        raise RegimeError("lam_a vanishes in the expanding regime")
    ratio = np.abs(la) / np.abs(lb)
    if np.all(ratio < 1):
        forward = True
        contraction = float(ratio.max())
    elif np.all(ratio > 1):
        forward = False
        contraction = float((1.0 / ratio).max())
    else:
        raise RegimeError(
            f"|lam_a/lam_b| straddles 1 (min {ratio.min():.6g}, max {ratio.max():.6g})")
    u = np.zeros_like(b)
    if forward:
        a = la / lb
        c = b / lb
    else:
        a = lb / la
        c = b / la
    for _ in range(thresholds.max_sweeps):
        if forward:
            new = np.roll(a * u - c, 1, axis=0)
        else:
            new = c + a * np.roll(u, -1, axis=0)
        diff = np.max(np.abs(new - u)) if new.size else 0.0
        u = new
        if history is not None:
            history.append(float(diff))
        scale = max(1.0, float(np.max(np.abs(u))) if u.size else 0.0)
        if diff < thresholds.stop_rtol * scale:
            return u
    raise SequenceNonConvergenceError(
        f"fixed-point iteration hit {thresholds.max_sweeps} sweeps (contraction {contraction:.6g})",
        contraction)


def _constant_value(lam, q):
    lam = np.asarray(lam)
    if lam.ndim == 0:
        return lam[()]
    flat = lam.reshape(lam.shape[0], -1)
    if not np.all(flat == flat[:1]):
        raise ValueError("expected k-independent multipliers")
    if flat.shape[1] and not np.all(flat[0] == flat[0, 0]):
        raise ValueError("expected one scalar multiplier")
    return flat[0, 0]


def solve_unit_modulus(lam_a, lam_b, b, *, atol=1e-12):
    """Constant ``|lam_a| = |lam_b| = 1``: closed form for ``u(0)``, then recursion."""
    b = np.asarray(b)
    q = b.shape[0]
    la = complex(_constant_value(lam_a, q))
    lb = complex(_constant_value(lam_b, q))
    r = lb / la
    denom = 1.0 - r ** q
    if abs(denom) <= atol:
        raise DegenerateResonanceError(
            f"(lam_b/lam_a)^q = 1 to within {abs(denom):.3g}; use the cohomological solver")
    weights = r ** np.arange(q)
    u0 = np.tensordot(weights, b, axes=(0, 0)) / (la * denom)
    u = np.empty(b.shape, dtype=complex)
    u[0] = u0
    for k in range(q - 1):
        u[k + 1] = (la * u[k] - b[k]) / lb
    if np.isrealobj(b) and np.isreal(la) and np.isreal(lb):
        return u.real
    return u


def solve_constant(lam_a, lam_b, b):
    """Constant multipliers, any modulus ratio other than a ``q``-th root of unity.

    Uses the geometric-sum solution written in whichever direction has
    ratio at most one in modulus, evaluated for every ``k`` directly (no
    recursion, so no error growth).
    """
    b = np.asarray(b)
    q = b.shape[0]
    la = _constant_value(lam_a, q)
    lb = _constant_value(lam_b, q)
    k = np.arange(q)
    if abs(lb) <= abs(la):
        r = lb / la
        denom = 1.0 - r ** q
        if denom == 0:
            raise DegenerateResonanceError("(lam_b/lam_a)^q = 1")
        # u(k) = sum_i r^i b(k+i) / (lam_a (1 - r^q))
        idx = (k[:, None] + k[None, :]) % q
        M = (r ** k)[None, :] / (la * denom)
    else:
        r = la / lb
        denom = 1.0 - r ** q
        if denom == 0:
            raise DegenerateResonanceError("(lam_a/lam_b)^q = 1")
        # u(k) = -sum_{i=1..q} r^(i-1) b(k-i) / (lam_b (1 - r^q))
        i = k + 1
        idx = (k[:, None] - i[None, :]) % q
        M = -(r ** k)[None, :] / (lb * denom)
    coef = np.zeros((q, q), dtype=np.result_type(M, float))
    coef[k[:, None], idx] = M
    return np.tensordot(coef, b, axes=(1, 0))


def solve_cohomological(b, *, tol_sum=None, allow_nonzero_sum=False):
    """``u(k) - u(k+1) = b(k)`` with ``u(0) = 0``.

    The equation needs ``sum b = 0``. A nonzero sum beyond ``tol_sum``
    (default ``1e-10 q max(1, max|b|)``) raises :class:`ZeroSumError` unless
    ``allow_nonzero_sum`` is set, in which case the wraparound relation is
    simply left unsatisfied.
    """
    b = np.asarray(b)
    q = b.shape[0]
    total = b.sum(axis=0)
    if not allow_nonzero_sum:
        if tol_sum is None:
            tol_sum = 1e-10 * q * max(1.0, float(np.max(np.abs(b))) if b.size else 0.0)
        if np.any(np.abs(total) > tol_sum):
            raise ZeroSumError(f"sum of right-hand side is {np.max(np.abs(total)):.3g}", total)
    u = np.zeros_like(b, dtype=np.result_type(b, float))
    u[1:] = -np.cumsum(b[:-1], axis=0)
    return u


def _is_constant(lam, thresholds):
    lam = np.asarray(lam)
    if lam.ndim == 0:
        return True
    flat = lam.reshape(-1)
    spread = np.max(np.abs(flat - flat[0]))
    return spread <= thresholds.constant_rtol * abs(flat[0])


def solve_auto(lam_a, lam_b, b, *, thresholds=DEFAULT_THRESHOLDS, allow_nonzero_sum=False):
    """Pick a solver from the shape of the multipliers.

    * constant and equal multipliers: divide through, cohomological solve;
    * constant, ``|lam_b/lam_a| = 1``: :func:`solve_unit_modulus`;
    * other constant multipliers: :func:`solve_constant`;
    * ``k``-dependent multipliers: :func:`solve_contracting` (which rejects
      ratios straddling 1).
    """
    b = np.asarray(b)
    if _is_constant(lam_a, thresholds) and _is_constant(lam_b, thresholds):
        la = np.asarray(lam_a).reshape(-1)[0]
        lb = np.asarray(lam_b).reshape(-1)[0]
        if abs(la - lb) <= thresholds.equal_rtol * abs(la):
            return solve_cohomological(b / la, allow_nonzero_sum=allow_nonzero_sum)
        if abs(abs(lb / la) - 1.0) <= thresholds.unit_rtol and abs(abs(la) - 1.0) <= thresholds.unit_rtol:
            return solve_unit_modulus(la, lb, b)
        return solve_constant(la, lb, b)
    return solve_contracting(lam_a, lam_b, b, thresholds=thresholds)


@dataclass(frozen=True)
class RescaleResult:
    a_s: np.ndarray
    a_u: np.ndarray
    lam_s_bar: complex
    lam_u_bar: complex


def _log_multipliers(lam, name):
    lam = np.asarray(lam)
    if np.iscomplexobj(lam):
        if np.any(lam.real <= 0):
            raise ValueError(f"{name} must have positive real part")
        return np.log(lam)
    if np.any(lam <= 0):
        raise ValueError(f"{name} must be positive")
    return np.log(lam)


def _rescale_one(lam):
    logs = _log_multipliers(lam, "multiplier")
    mean = logs.mean()
    u = solve_cohomological(-(logs - mean), allow_nonzero_sum=True)
    return np.exp(u), np.exp(mean)


def rescale_constant(v_s, v_u, lam_s, lam_u):
    """Rescale stable/unstable columns so their multipliers become constant.

    Returns ``(v_s*a_s, v_u*a_u, RescaleResult)`` with
    ``a(k) lam(k) = a(k+1) lam_bar`` and ``lam_bar`` the geometric mean.
    """
    a_s, ls = _rescale_one(lam_s)
    a_u, lu = _rescale_one(lam_u)
    if np.isrealobj(lam_s):
        ls = float(ls)
    if np.isrealobj(lam_u):
        lu = float(lu)
    vs = np.asarray(v_s) * a_s[:, None]
    vu = np.asarray(v_u) * a_u[:, None]
    return vs, vu, RescaleResult(a_s, a_u, ls, lu)
