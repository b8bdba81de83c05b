"""Quasi-Newton continuation of subharmonic periodic orbits with Floquet frames.

A solution is a cyclic sequence ``X(k)`` of map points together with frames
``P(k)`` and near-diagonal multiplier matrices ``Lambda(k)`` such that

    F(X(k)) = X(k+1),        DF(X(k)) P(k) = P(k+1) Lambda(k).

Frame columns are ordered (L, C, S, U): the tangent to the unperturbed
torus, its symplectic partner, then the stable and unstable directions.
``Lambda`` has the fixed layout::

    [[lam1, T,    0,     0   ],
     [0,    lam2, 0,     0   ],
     [0,    0,    lam_s, 0   ],
     [0,    0,    0,     lam_u]]

Indices ``k`` always run over the sequence length ``n`` (normally ``q``;
``2q`` after the orientation-reversal fallback).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging
import warnings

import numpy as np

from . import seqsolve
from .integrate import IntegrationError
from .systems import J4, ResonanceLabel

__all__ = [
    "SPOError",
    "SeedMismatchError",
    "BundleInitError",
    "SingularFrameError",
    "NewtonNonConvergenceError",
    "ContinuationStalledError",
    "DefectWarning",
    "NearDiagonalFloquet",
    "PeriodicOrbitSolution",
    "NewtonResidual",
    "NewtonCorrection",
    "HyperbolicBundle",
    "DoublingSignal",
    "InitCenterWorkspace",
    "DiagonalFloquet",
    "seed_unperturbed",
    "init_hyperbolic_bundle",
    "init_center_bundle",
    "initialize_solution",
    "compute_residual",
    "x_step",
    "p_step",
    "schur_normalize",
    "quasi_newton_solve",
    "rescale_solution",
    "continue_family",
    "diagonalize_floquet",
    "monodromy",
    "classify_center",
]

log = logging.getLogger(__name__)

L, C, S, U = 0, 1, 2, 3


class SPOError(RuntimeError):
    pass


class SeedMismatchError(SPOError):
    def __init__(self, msg, residual):
        super().__init__(msg)
        self.residual = residual


class BundleInitError(SPOError):
    pass


class SingularFrameError(SPOError):
    pass


class NewtonNonConvergenceError(SPOError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


class ContinuationStalledError(SPOError):
    def __init__(self, msg, eps_reached, solutions):
        super().__init__(msg)
        self.eps_reached = eps_reached
        self.solutions = solutions


class DefectWarning(RuntimeWarning):
    pass


# ------------------------------------------------------------------ types

@dataclass(frozen=True)
class NearDiagonalFloquet:
    lam1: complex
    lam2: complex
    T: complex
    lam_s: np.ndarray
    lam_u: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lam_s, dtype=complex))
        lu = np.atleast_1d(np.asarray(self.lam_u, dtype=complex))
        if ls.shape != lu.shape or ls.ndim != 1:
            raise ValueError("lam_s and lam_u must be equal-length sequences")
        object.__setattr__(self, "lam_s", ls)
        object.__setattr__(self, "lam_u", lu)
        for name in ("lam1", "lam2", "T"):
            object.__setattr__(self, name, complex(getattr(self, name)))

    @property
    def n(self):
        return self.lam_s.shape[0]

    def matrices(self):
        """The ``(n, 4, 4)`` stack of ``Lambda(k)``."""
        M = np.zeros((self.n, 4, 4), dtype=complex)
        M[:, 0, 0] = self.lam1
        M[:, 0, 1] = self.T
        M[:, 1, 1] = self.lam2
        M[:, 2, 2] = self.lam_s
        M[:, 3, 3] = self.lam_u
        return M

    @property
    def is_constant(self):
        return bool(np.all(self.lam_s == self.lam_s[0]) and np.all(self.lam_u == self.lam_u[0]))

    @property
    def unit_center(self):
        """``lam1 = lam2 = 1`` exactly (the unperturbed initialization)."""
        return self.lam1 == 1 and self.lam2 == 1

    def products(self):
        """``(prod lam_s, prod lam_u)`` over one period of the sequence."""
        return complex(np.prod(self.lam_s)), complex(np.prod(self.lam_u))


@dataclass
class PeriodicOrbitSolution:
    eps: float
    label: ResonanceLabel
    X: np.ndarray
    P: np.ndarray
    lam: NearDiagonalFloquet
    mode: str = "perturbed"
    tol: float = 1e-7
    norm_E: float = float("nan")
    norm_E_red: float = float("nan")
    history: list = field(default_factory=list)
    cond_P: float = float("nan")

    def __post_init__(self):
        if self.mode not in ("perturbed", "flow_map"):
            raise ValueError(f"unknown mode {self.mode!r}")
        self.X = np.asarray(self.X, dtype=float)
        self.P = np.asarray(self.P, dtype=complex)
        if self.X.shape[1:] != (4,) or self.P.shape != (self.X.shape[0], 4, 4):
            raise ValueError("X must be (n, 4) and P must be (n, 4, 4)")
        if self.lam.n != self.X.shape[0]:
            raise ValueError("multiplier sequence length differs from X")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def doubled(self):
        return self.n == 2 * self.label.q

    @property
    def classification(self):
        return classify_center(self.lam.lam1, self.lam.lam2)


@dataclass(frozen=True)
class NewtonResidual:
    E: np.ndarray
    E_red: np.ndarray
    norm_E: float
    norm_E_red: float


@dataclass(frozen=True)
class NewtonCorrection:
    xi: np.ndarray | None = None
    eta: np.ndarray | None = None
    Q: np.ndarray | None = None
    d_lam1: complex = 0.0
    d_lam2: complex = 0.0
    d_T: complex = 0.0
    d_S: complex = 0.0
    d_lam_s: np.ndarray | None = None
    d_lam_u: np.ndarray | None = None


@dataclass(frozen=True)
class HyperbolicBundle:
    v_s: np.ndarray
    v_u: np.ndarray
    lam_s: np.ndarray
    lam_u: np.ndarray
    sweeps: int


@dataclass(frozen=True)
class DoublingSignal:
    """The converged direction closes with a sign flip: a multiplier is negative."""

    which: str
    sweeps: int


@dataclass(frozen=True)
class InitCenterWorkspace:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    v_c: np.ndarray
    a: np.ndarray
    J: np.ndarray = field(default_factory=lambda: J4.copy())


@dataclass(frozen=True)
class DiagonalFloquet:
    P_bar: np.ndarray
    Lam_bar: np.ndarray
    V_D: np.ndarray
    defective: bool = False


# --------------------------------------------------------------- helpers

def _sup(a):
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


def monodromy(DF):
    """``DF(n-1) ... DF(1) DF(0)``."""
    M = np.eye(4, dtype=np.result_type(DF, float))
    for Dk in DF:
        M = Dk @ M
    return M


def classify_center(lam1, lam2, *, imag_tol=1e-8, unit_tol=1e-6):
    """``'hyperbolic'``, ``'elliptic'``, ``'parabolic'`` or ``'other'``.

    Reporting only; the solver never branches on it.
    """
    lam1, lam2 = complex(lam1), complex(lam2)
    if abs(lam1.imag) > imag_tol:
        if abs(abs(lam1) - 1) < unit_tol and abs(lam2 - lam1.conjugate()) < unit_tol:
            return "elliptic"
        return "other"
    if lam1 == 1 and lam2 == 1:
        return "parabolic"
    return "hyperbolic"


def _omega(u, v):
    return np.einsum("...i,ij,...j->...", u, J4, v)


# -------------------------------------------------------------- seeding

def seed_unperturbed(smap0, x0, label, *, tol=1e-8, flow_period=None):
    """Map points ``X0(k) = F0^k(x0)`` and flow-vector tangents at ``eps = 0``.

    For flow maps the flow period ``T = q T_p / p`` is used to reach
    ``X0(k)`` in time ``(k T_p) mod T`` along a single trajectory, which
    avoids pushing integration error through ``q`` unstable iterates.
    Raises :class:`SeedMismatchError` when ``max_k |F0(X0(k)) - X0(k+1)|``
    exceeds ``tol``.
    """
    if not isinstance(label, ResonanceLabel):
        label = ResonanceLabel.parse(label)
    q = label.q
    x0 = np.asarray(x0, dtype=float)
    if hasattr(smap0, "unperturbed_points"):
        tp = smap0.period
        period = q * tp / label.p if flow_period is None else flow_period
        X0 = smap0.unperturbed_points(x0, np.mod(np.arange(q) * tp, period))
    else:
        pts = [x0]
        for _ in range(q - 1):
            pts.append(np.asarray(smap0.evaluate(pts[-1]), dtype=float))
        X0 = np.array(pts)
    miss = _sup(np.asarray(smap0.evaluate(X0)) - np.roll(X0, -1, axis=0))
    if miss > tol:
        raise SeedMismatchError(
            f"seed misses invariance by {miss:.3e} (> {tol:g}); the flow period is not "
            f"resonant with {label}", miss)
    DK = np.asarray(smap0.tangent(X0), dtype=float)
    return X0, DK


# ------------------------------------------------------ hyperbolic columns

_STARTS = (
    np.full(4, 0.5),
    np.array([0.5, -0.5, 0.5, -0.5]),
    np.array([1.0, 2.0, 3.0, 4.0]) / np.sqrt(30.0),
)


def _power_iterate(step, n, DK_unit, tol, max_sweeps, which):
    for start in _STARTS:
        v = np.tile(start, (n, 1))
        for sweep in range(1, max_sweeps + 1):
            new = step(v)
            # projective iteration: align each new vector with its predecessor
            new *= np.where(np.einsum("ki,ki->k", new, v) < 0, -1.0, 1.0)[:, None]
            diff = _sup(new - v)
            v = new
            if diff < tol:
                break
        else:
            raise BundleInitError(
                f"{which} power iteration did not converge in {max_sweeps} sweeps "
                f"(last change {diff:.3e})")
        if np.max(np.abs(np.einsum("ki,ki->k", v, DK_unit))) > 1 - 1e-6:
            continue   # collided with the torus tangent; try another start
        return v, sweep
    raise BundleInitError(f"{which} power iteration collides with the torus tangent")


def _orient(v, images):
    """Fix signs so ``images[k]`` is a positive multiple of ``v[k+1]``.

    ``images[k]`` is a function returning the image of ``v[k]``. Returns the
    re-signed vectors and whether the cycle closes with a negative sign.
    """
    v = v.copy()
    n = v.shape[0]
    for k in range(n - 1):
        if images(v, k) @ v[k + 1] < 0:
            v[k + 1] = -v[k + 1]
    return v, images(v, n - 1) @ v[0] < 0


def init_hyperbolic_bundle(DF, DK=None, *, tol=1e-13, max_sweeps=500):
    """Stable/unstable unit vectors and pointwise multipliers by power iteration.

    Returns a :class:`HyperbolicBundle`, or a :class:`DoublingSignal` when one
    of the directions has a negative monodromy multiplier (the caller then
    repeats with the doubled sequence).
    """
    DF = np.asarray(DF, dtype=float)
    n = DF.shape[0]
    if DK is None:
        DK_unit = np.zeros((n, 4))
    else:
        DK = np.asarray(DK, dtype=float)
        DK_unit = DK / np.linalg.norm(DK, axis=1, keepdims=True)

    def up(v):
        w = np.einsum("kij,kj->ki", DF, v)
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        return np.roll(w, 1, axis=0)

    def down(v):
        w = np.linalg.solve(DF, np.roll(v, -1, axis=0)[..., None])[..., 0]
        return w / np.linalg.norm(w, axis=1, keepdims=True)

    vu, su = _power_iterate(up, n, DK_unit, tol, max_sweeps, "unstable")
    vu, flip = _orient(vu, lambda v, k: DF[k] @ v[k])
    if flip:
        return DoublingSignal("unstable", su)
    vs, ss = _power_iterate(down, n, DK_unit, tol, max_sweeps, "stable")
    vs, flip = _orient(vs, lambda v, k: DF[k] @ v[k])
    if flip:
        return DoublingSignal("stable", ss)
    lam_u = np.linalg.norm(np.einsum("kij,kj->ki", DF, vu), axis=1)
    ws = np.linalg.solve(DF, np.roll(vs, -1, axis=0)[..., None])[..., 0]
    lam_s = 1.0 / np.linalg.norm(ws, axis=1)
    return HyperbolicBundle(vs, vu, lam_s, lam_u, max(su, ss))


# ---------------------------------------------------------- center columns

def init_center_bundle(DF, DK, v_s, v_u, lam_s, lam_u, *, b_tol=1e-6):
    """Symplectic partner ``v2`` of the tangent and the shear ``T``.

    ``lam_s``, ``lam_u`` must already be constant. Returns ``(v2, T, ws)``.
    """
    DF = np.asarray(DF, dtype=float)
    DK = np.asarray(DK, dtype=float)
    Jinv = J4.T
    w = (DK @ Jinv.T) / np.sum(DK * DK, axis=1, keepdims=True)
    rhs = np.einsum("kij,kj->ki", DF, w)
    nxt = lambda a: np.roll(a, -1, axis=0)
    M = np.stack([nxt(DK), nxt(w), nxt(v_s), nxt(v_u)], axis=-1)
    coef = np.linalg.solve(M, rhs[..., None])[..., 0]
    A, B, Cc, D = coef.T
    if np.max(np.abs(B - 1)) > b_tol:
        raise BundleInitError(
            f"B(k) deviates from 1 by {np.max(np.abs(B - 1)):.3e}; map not symplectic "
            "or seed not on the torus")
    f1 = seqsolve.solve_auto(lam_s, 1.0, -Cc)
    f2 = seqsolve.solve_auto(lam_u, 1.0, -D)
    v_c = w + f1[:, None] * v_s + f2[:, None] * v_u
    T = float(np.mean(A))
    a = seqsolve.solve_cohomological(-(A - T))
    v2 = v_c + a[:, None] * DK
    return v2, T, InitCenterWorkspace(A, B, Cc, D, f1, f2, v_c, a)


def initialize_solution(smap0, X0, DK, label, *, tol=1e-7, mode="perturbed",
                        power_tol=1e-13, max_sweeps=500):
    """Full ``eps = 0`` solution: frames, multipliers and the center block.

    Falls back to the doubled sequence once if the power iteration signals
    a negative multiplier.
    """
    if not isinstance(label, ResonanceLabel):
        label = ResonanceLabel.parse(label)
    X0 = np.asarray(X0, dtype=float)
    DK = np.asarray(DK, dtype=float)
    _, DF = smap0.evaluate_with_jacobian(X0)
    hb = init_hyperbolic_bundle(DF, DK, tol=power_tol, max_sweeps=max_sweeps)
    if isinstance(hb, DoublingSignal):
        log.info("negative %s multiplier: doubling the sequence to %d", hb.which, 2 * len(X0))
        X0, DK, DF = (np.concatenate([a, a]) for a in (X0, DK, DF))
        hb = init_hyperbolic_bundle(DF, DK, tol=power_tol, max_sweeps=max_sweeps)
        if isinstance(hb, DoublingSignal):
            raise BundleInitError("power iteration fails on both the q and 2q sequences")
    vs, vu, rs = seqsolve.rescale_constant(hb.v_s, hb.v_u, hb.lam_s, hb.lam_u)
    ls = np.full(len(X0), rs.lam_s_bar)
    lu = np.full(len(X0), rs.lam_u_bar)
    v2, T, ws = init_center_bundle(DF, DK, vs, vu, ls, lu)
    P = np.stack([DK, v2, vs, vu], axis=-1).astype(complex)
    lam = NearDiagonalFloquet(1.0, 1.0, T, ls, lu)
    sol = PeriodicOrbitSolution(0.0, label, X0, P, lam, mode=mode, tol=tol)
    res = compute_residual(smap0, sol)
    sol.norm_E, sol.norm_E_red = res.norm_E, res.norm_E_red
    sol.cond_P = float(np.max(np.linalg.cond(P)))
    return sol, ws


# ------------------------------------------------------------- residuals

def _bundle_residual(P, lam, DF):
    Pn = np.roll(P, -1, axis=0)
    try:
        red = np.linalg.solve(Pn, np.matmul(DF, P))
    except np.linalg.LinAlgError as exc:
        raise SingularFrameError("singular frame P(k)") from exc
    return red - lam.matrices()


def compute_residual(smap, sol, *, FX=None, DF=None):
    """Invariance and bundle residuals at the map's ``eps``."""
    if FX is None or DF is None:
        FX, DF = smap.evaluate_with_jacobian(sol.X)
    E = np.asarray(FX) - np.roll(sol.X, -1, axis=0)
    E_red = _bundle_residual(sol.P, sol.lam, DF)
    return NewtonResidual(E, E_red, _sup(E), _sup(E_red))


# ----------------------------------------------------------------- X step

def x_step(sol, residual, *, thresholds=seqsolve.DEFAULT_THRESHOLDS, return_correction=False):
    """Correct ``X`` from the invariance residual (``DeltaX = P xi``)."""
    P = sol.P
    lam = sol.lam
    n = sol.n
    E = np.asarray(residual.E, dtype=complex)
    try:
        eta = -np.linalg.solve(np.roll(P, -1, axis=0), E[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularFrameError("singular frame P(k)") from exc
    T = lam.T
    xi = np.zeros((n, 4), dtype=complex)
    if sol.mode == "flow_map" or lam.unit_center:
        if T == 0:
            raise SPOError("shear T vanishes; cannot fix the xi_2 constant")
        xi2 = seqsolve.solve_cohomological(eta[:, 1] / lam.lam2, allow_nonzero_sum=True)
        xi2 = xi2 + np.sum(eta[:, 0] - T * xi2) / (n * T)
        xi1 = seqsolve.solve_cohomological((eta[:, 0] - T * xi2) / lam.lam1,
                                           allow_nonzero_sum=sol.mode == "flow_map")
    else:
        xi2 = seqsolve.solve_auto(lam.lam2, 1.0, eta[:, 1], thresholds=thresholds)
        xi1 = seqsolve.solve_auto(lam.lam1, 1.0, eta[:, 0] - T * xi2, thresholds=thresholds)
    xi[:, 0] = xi1
    xi[:, 1] = xi2
    xi[:, 2] = seqsolve.solve_auto(lam.lam_s, 1.0, eta[:, 2], thresholds=thresholds)
    xi[:, 3] = seqsolve.solve_auto(lam.lam_u, 1.0, eta[:, 3], thresholds=thresholds)
    X_new = np.real(sol.X + np.einsum("kij,kj->ki", P, xi))
    if return_correction:
        return X_new, NewtonCorrection(xi=xi, eta=eta)
    return X_new


# ----------------------------------------------------------------- P step

def p_step(sol, E_red, *, thresholds=seqsolve.DEFAULT_THRESHOLDS, return_correction=False):
    """Solve the sixteen scalar bundle equations; return ``(P_c, Lambda_c)``.

    ``Lambda_c`` is the ``(n, 4, 4)`` corrected multiplier stack; its top-left
    block generally has a nonzero (2,1) entry that :func:`schur_normalize`
    removes.
    """
    lam = sol.lam
    E = np.asarray(E_red, dtype=complex)
    n = E.shape[0]
    l1, l2, T = lam.lam1, lam.lam2, lam.T
    ls, lu = lam.lam_s, lam.lam_u
    flow_map = sol.mode == "flow_map"
    nxt = lambda a: np.roll(a, -1, axis=0)

    def solve(la, lb, b, **kw):
        return seqsolve.solve_auto(la, lb, b, thresholds=thresholds, **kw)

    Q = np.zeros((n, 4, 4), dtype=complex)
    Q[:, C, S] = solve(l2, ls, -E[:, C, S])
    Q[:, C, U] = solve(l2, lu, -E[:, C, U])
    Q[:, S, L] = solve(ls, l1, -E[:, S, L])
    Q[:, S, U] = solve(ls, lu, -E[:, S, U])
    Q[:, U, L] = solve(lu, l1, -E[:, U, L])
    Q[:, U, S] = solve(lu, ls, -E[:, U, S])
    Q[:, L, S] = solve(l1, ls, -E[:, L, S] - T * Q[:, C, S])
    Q[:, L, U] = solve(l1, lu, -E[:, L, U] - T * Q[:, C, U])
    Q[:, S, C] = solve(ls, l2, -E[:, S, C] + T * nxt(Q[:, S, L]))
    Q[:, U, C] = solve(lu, l2, -E[:, U, C] + T * nxt(Q[:, U, L]))
    d_ls = E[:, S, S].copy()
    d_lu = E[:, U, U].copy()

    d_S = 0.0 if flow_map else np.mean(E[:, C, L])
    Q[:, C, L] = solve(l2, l1, d_S - E[:, C, L], allow_nonzero_sum=flow_map)
    if flow_map:
        d_l1 = d_l2 = 0.0
        # the cohomological Q_CL is fixed up to a constant; with the center
        # multipliers pinned it is the constant that cancels the means of
        # E_LL and E_CC (they are opposite to first order)
        if T != 0:
            Q[:, C, L] += (np.mean(E[:, C, C] - E[:, L, L]) / 2 - T * np.mean(Q[:, C, L])) / T
    else:
        d_l1 = np.mean(E[:, L, L] + T * Q[:, C, L])
        d_l2 = np.mean(E[:, C, C] - T * nxt(Q[:, C, L]))
    Q[:, L, L] = seqsolve.solve_cohomological(
        (d_l1 - E[:, L, L] - T * Q[:, C, L]) / l1, allow_nonzero_sum=flow_map)
    Q[:, C, C] = seqsolve.solve_cohomological(
        (d_l2 - E[:, C, C] + T * nxt(Q[:, C, L])) / l2, allow_nonzero_sum=flow_map)
    rhs_lc = -E[:, L, C] - T * Q[:, C, C] + T * nxt(Q[:, L, L])
    d_T = -np.mean(rhs_lc)
    Q[:, L, C] = solve(l1, l2, d_T + rhs_lc, allow_nonzero_sum=flow_map)

    P_c = sol.P + np.matmul(sol.P, Q)
    Lc = lam.matrices()
    Lc[:, 0, 0] += d_l1
    Lc[:, 0, 1] += d_T
    Lc[:, 1, 0] += d_S
    Lc[:, 1, 1] += d_l2
    Lc[:, 2, 2] += d_ls
    Lc[:, 3, 3] += d_lu
    if return_correction:
        corr = NewtonCorrection(Q=Q, d_lam1=complex(d_l1), d_lam2=complex(d_l2),
                                d_T=complex(d_T), d_S=complex(d_S), d_lam_s=d_ls, d_lam_u=d_lu)
        return P_c, Lc, corr
    return P_c, Lc


# ------------------------------------------------------------------ Schur

def _schur_2x2(A):
    """Unitary ``V`` with ``V^H A V`` upper triangular, by the quadratic formula.

    The retained eigenvalue in the (1,1) slot is the one closest to ``A[0,0]``.
    """
    a, b, c, d = A[0, 0], A[0, 1], A[1, 0], A[1, 1]
    if c == 0:
        return np.eye(2, dtype=complex)
    half_tr = 0.5 * (a + d)
    disc = np.sqrt(complex(0.25 * (a - d) ** 2 + b * c))
    roots = (half_tr + disc, half_tr - disc)
    mu = min(roots, key=lambda r: abs(r - a))
    c1 = np.array([b, mu - a], dtype=complex)
    c2 = np.array([mu - d, c], dtype=complex)
    v = c1 if np.linalg.norm(c1) >= np.linalg.norm(c2) else c2
    v = v / np.linalg.norm(v)
    if v[0] != 0:
        v = v * (abs(v[0]) / v[0])
    v1, v2 = v
    real = np.isreal(A).all() and np.isreal(disc)
    V = np.array([[v1, -np.conj(v2)], [v2, np.conj(v1)]])
    return V.real.astype(complex) if real else V


def schur_normalize(P_c, Lam_c):
    """Rotate the center columns so the 2x2 block becomes upper triangular.

    Returns ``(P, NearDiagonalFloquet)``; the stable and unstable columns
    and multipliers pass through untouched.
    """
    Lam_c = np.asarray(Lam_c, dtype=complex)
    A = Lam_c[0, :2, :2]
    if not np.allclose(Lam_c[:, :2, :2], A, rtol=0, atol=0):
        raise ValueError("center block must be the same for every k")
    V = _schur_2x2(A)
    Ut = V.conj().T @ A @ V
    P = np.array(P_c, dtype=complex, copy=True)
    P[:, :, :2] = P_c[:, :, :2] @ V
    lam = NearDiagonalFloquet(Ut[0, 0], Ut[1, 1], Ut[0, 1], Lam_c[:, 2, 2], Lam_c[:, 3, 3])
    return P, lam


# ------------------------------------------------------------- Newton loop

def quasi_newton_solve(smap, sol, *, tol=None, max_iter=20, thresholds=seqsolve.DEFAULT_THRESHOLDS,
                       divergence_factor=1e3):
    """Iterate X and P/Lambda corrections at ``smap.eps`` until both residuals < ``tol``.

    One variational batch per iteration: ``F`` and ``DF`` at the corrected
    points feed the P step and the next invariance residual. The returned
    solution records the ``(||E||, ||E_red||)`` history.
    """
    tol = sol.tol if tol is None else tol
    eps = float(smap.eps)
    cur = replace(sol, eps=eps, tol=tol, history=[])
    try:
        FX, DF = smap.evaluate_with_jacobian(cur.X)
    except IntegrationError as exc:
        raise NewtonNonConvergenceError(f"integration failed: {exc}", []) from exc
    res = compute_residual(smap, cur, FX=FX, DF=DF)
    history = [(res.norm_E, res.norm_E_red)]
    first = max(history[0])
    for it in range(max_iter + 1):
        worst = max(res.norm_E, res.norm_E_red)
        if not np.isfinite(worst) or worst > divergence_factor * max(first, tol):
            raise NewtonNonConvergenceError(
                f"residual diverged to {worst:.3e} at iteration {it}", history)
        if worst < tol:
            cur.history = history
            cur.norm_E, cur.norm_E_red = res.norm_E, res.norm_E_red
            cur.cond_P = float(np.max(np.linalg.cond(cur.P)))
            return cur
        if it == max_iter:
            break
        try:
            X_new = x_step(cur, res, thresholds=thresholds)
            FX, DF = smap.evaluate_with_jacobian(X_new)
            cur = replace(cur, X=X_new)
            E_red = _bundle_residual(cur.P, cur.lam, DF)
            P_c, L_c = p_step(cur, E_red, thresholds=thresholds)
            P, lam = schur_normalize(P_c, L_c)
        except (seqsolve.SequenceSolveError, IntegrationError, np.linalg.LinAlgError) as exc:
            raise NewtonNonConvergenceError(f"correction failed: {exc}", history) from exc
        cur = replace(cur, P=P, lam=lam)
        res = compute_residual(smap, cur, FX=FX, DF=DF)
        history.append((res.norm_E, res.norm_E_red))
        log.debug("eps=%.6g iter %d: |E|=%.3e |E_red|=%.3e", eps, it + 1, *history[-1])
    raise NewtonNonConvergenceError(
        f"no convergence to {tol:g} in {max_iter} iterations (last {history[-1]})", history)


def rescale_solution(sol):
    """Make ``lam_s``, ``lam_u`` constant by rescaling the S and U columns."""
    if sol.lam.is_constant:
        return sol
    vs, vu, rs = seqsolve.rescale_constant(sol.P[:, :, S], sol.P[:, :, U],
                                           sol.lam.lam_s, sol.lam.lam_u)
    P = sol.P.copy()
    P[:, :, S] = vs
    P[:, :, U] = vu
    n = sol.n
    lam = replace(sol.lam, lam_s=np.full(n, rs.lam_s_bar), lam_u=np.full(n, rs.lam_u_bar))
    return replace(sol, P=P, lam=lam)


# ----------------------------------------------------------- continuation

def continue_family(smap, sol0, eps_final, n_steps, *, tol=None, max_iter=20, max_halvings=4,
                    thresholds=seqsolve.DEFAULT_THRESHOLDS, callback=None):
    """Continue ``sol0`` from its ``eps`` to ``eps_final`` in ``n_steps`` equal steps.

    Each converged solution seeds the next step after :func:`rescale_solution`.
    A failed step is retried with half the step size, at most
    ``max_halvings`` times in a row. After a success the step doubles again,
    never beyond the nominal one. Small steps are what carries the center
    multipliers through 1 at a stability change.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    tol = sol0.tol if tol is None else tol
    eps0 = float(sol0.eps)
    h_nom = (float(eps_final) - eps0) / n_steps
    out = [sol0]
    if h_nom == 0:
        return out
    cur = sol0
    eps = eps0
    h = h_nom
    halvings = 0
    while abs(eps_final - eps) > 1e-15 * max(1.0, abs(eps_final)):
        target = eps + h
        if (h > 0 and target > eps_final) or (h < 0 and target < eps_final) \
                or abs(eps_final - target) < 1e-9 * abs(h_nom):
            target = float(eps_final)
        try:
            nxt = quasi_newton_solve(smap.at(target), cur, tol=tol, max_iter=max_iter,
                                     thresholds=thresholds)
        except NewtonNonConvergenceError as exc:
            halvings += 1
            if halvings > max_halvings:
                raise ContinuationStalledError(
                    f"continuation stalled at eps={eps:.6g} after {max_halvings} halvings: {exc}",
                    eps, out) from exc
            h /= 2
            log.info("step to eps=%.6g failed; halving to %.3g", target, h)
            continue
        nxt = rescale_solution(nxt)
        out.append(nxt)
        if callback is not None:
            callback(nxt)
        cur = nxt
        eps = target
        halvings = 0
        h = h_nom if abs(2 * h) >= abs(h_nom) else 2 * h
    return out


# ---------------------------------------------------------- diagonalize

def diagonalize_floquet(sol, *, defect_rtol=1e-10):
    """Diagonal Floquet form ``P_bar = P V_D``, ``Lam_bar = V_D^-1 Lam V_D``."""
    lam = sol.lam
    if not lam.is_constant:
        raise ValueError("diagonalization needs k-independent multipliers; rescale first")
    l1, l2, T = lam.lam1, lam.lam2, lam.T
    V = np.eye(4, dtype=complex)
    defective = False
    if T != 0:
        if abs(l1 - l2) < defect_rtol * max(1.0, abs(l1)):
            warnings.warn("lam1 and lam2 coincide: center block is not diagonalizable",
                          DefectWarning, stacklevel=2)
            defective = True
        else:
            V[0, 1] = T / (l2 - l1)
    Lam = lam.matrices()[0]
    Lbar = np.linalg.solve(V, Lam @ V)
    if not defective:
        off = ~np.eye(4, dtype=bool)
        Lbar[off] = 0.0
    return DiagonalFloquet(sol.P @ V, Lbar, V, defective)
