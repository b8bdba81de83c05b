"""Weak stable/unstable manifolds of a periodic orbit inside the cylinder.

The manifold through the orbit points ``X(k)`` is written as

    W(k, s) = X(k) + sum_{j>=1} W_j(k) s^j,
    F(W(k, s)) = W(k+1, lam s),

and solved one order at a time. At order ``d`` the error coefficient
``E_d(k)`` comes from pushing the degree-``d`` jet of ``W_{<d}(k, .)`` through
the map, and the new coefficient solves the decoupled scalar sequences
``Lambda_i V_i(k) - lam^d V_i(k+1) = eta_i(k)`` in the diagonal Floquet
frame.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import logging

import numpy as np

from . import seqsolve
from .integrate import IntegrationError
from .spo import classify_center, diagonalize_floquet, rescale_solution

__all__ = [
    "SeparatrixError",
    "SeparatrixPreconditionError",
    "ResonanceError",
    "JetFailureError",
    "InconsistentParameterizationError",
    "OrderCorrection",
    "SeparatrixParameterization",
    "order_error",
    "solve_order",
    "parameterize",
    "invariance_residual",
    "fundamental_domain",
    "sample_curves",
]

log = logging.getLogger(__name__)

BRANCHES = ("weak_stable", "weak_unstable")


class SeparatrixError(RuntimeError):
    pass


class SeparatrixPreconditionError(SeparatrixError):
    pass


class ResonanceError(SeparatrixError):
    def __init__(self, i, d, ratio):
        super().__init__(f"near-resonant denominator: |Lambda_{i + 1} / lam^{d}| = {abs(ratio):.12g}")
        self.i, self.d, self.ratio = i, d, ratio


class JetFailureError(SeparatrixError):
    pass


class InconsistentParameterizationError(SeparatrixError):
    pass


@dataclass(frozen=True)
class OrderCorrection:
    E_d: np.ndarray
    V_d: np.ndarray
    eta_d: np.ndarray


@dataclass(frozen=True)
class SeparatrixParameterization:
    """Coefficients ``W[k, j]`` (shape ``(n, d + 1, 4)``) of one separatrix branch.

    ``column`` is the Floquet column that ``W_1`` follows. ``D`` holds the
    per-point domain radii once :func:`fundamental_domain` has run.
    """

    label: object
    branch: str
    lam: float
    W: np.ndarray
    alpha: float
    column: int
    eps: float = 0.0
    E_tol: float | None = None
    D: np.ndarray | None = None
    norm: str = "inf"

    @property
    def degree(self):
        return self.W.shape[1] - 1

    @property
    def n(self):
        return self.W.shape[0]

    def truncated(self, degree):
        if not 1 <= degree <= self.degree:
            raise ValueError(f"degree must lie in [1, {self.degree}]")
        return replace(self, W=self.W[:, : degree + 1].copy(), D=None, E_tol=None)

    def evaluate(self, k, s):
        """``W(k, s)`` by Horner's rule; ``k`` and ``s`` broadcast together."""
        k = np.asarray(k)
        s = np.asarray(s, dtype=float)
        k, s = np.broadcast_arrays(k, s)
        coeffs = self.W[k % self.n]
        out = coeffs[..., -1, :].copy()
        for j in range(self.degree - 1, -1, -1):
            out = out * s[..., None] + coeffs[..., j, :]
        return out


def _realify(P):
    """Rotate every column of ``P`` by one global phase so it becomes real."""
    P = np.array(P, dtype=complex, copy=True)
    for c in range(P.shape[2]):
        col = P[:, :, c]
        idx = np.unravel_index(np.argmax(np.abs(col)), col.shape)
        pivot = col[idx]
        if pivot != 0:
            P[:, :, c] = col * (abs(pivot) / pivot)
    scale = np.max(np.abs(P))
    if np.max(np.abs(P.imag)) > 1e-8 * scale:
        raise SeparatrixPreconditionError("Floquet frame is not real up to column phases")
    return P.real.copy()


# ------------------------------------------------------------ order step

def order_error(smap, W, lam, d, *, check_tol=None):
    """``E_d(k)``: the ``s^d`` coefficient of ``F(W_{<d}(k, s)) - W_{<d}(k+1, lam s)``.

    ``W`` holds coefficients ``0..d-1`` (shape ``(n, d, 4)``). The second
    term has no ``s^d`` part, so ``E_d`` is read off the degree-``d`` jet of
    the first. With ``check_tol`` the lower orders are verified to cancel.
    """
    W = np.asarray(W, dtype=float)
    n, m, _ = W.shape
    if m != d:
        raise ValueError(f"expected coefficients 0..{d - 1}, got {m}")
    jet_in = np.zeros((n, 4, d + 1))
    jet_in[:, :, :d] = np.transpose(W, (0, 2, 1))
    try:
        img = np.asarray(smap.evaluate_jet(jet_in))
    except IntegrationError as exc:
        raise JetFailureError(f"jet transport failed at order {d}: {exc}; "
                              "try a smaller scale alpha") from exc
    if not np.all(np.isfinite(img)):
        raise JetFailureError(f"non-finite jet at order {d}; try a smaller scale alpha")
    if check_tol is not None:
        powers = lam ** np.arange(d)
        lower = img[:, :, :d] - np.transpose(np.roll(W, -1, axis=0), (0, 2, 1)) * powers
        scale = max(1.0, float(np.max(np.abs(W))))
        bad = float(np.max(np.abs(lower)))
        if bad > check_tol * scale:
            raise InconsistentParameterizationError(
                f"orders below {d} do not cancel (residual {bad:.3e})")
    return img[:, :, d]


def solve_order(E_d, P_bar, lam_diag, lam, d, *, margin=1e-6,
                thresholds=seqsolve.DEFAULT_THRESHOLDS, return_correction=False):
    """Order-``d`` coefficients ``W_d(k) = P(k) V_d(k)`` cancelling ``E_d``.

    Each component solves ``Lambda_i V_i(k) - lam^d V_i(k+1) = eta_i(k)``
    with ``eta = -P(k+1)^{-1} E_d(k)`` by fixed-point iteration.
    """
    if d < 2:
        raise ValueError("orders start at 2")
    E_d = np.asarray(E_d, dtype=float)
    P_bar = np.asarray(P_bar)
    lam_d = lam ** d
    eta = -np.linalg.solve(np.roll(P_bar, -1, axis=0), E_d[..., None])[..., 0]
    V = np.zeros_like(eta)
    for i in range(4):
        ratio = lam_diag[i] / lam_d
        if abs(abs(ratio) - 1.0) < margin:
            raise ResonanceError(i, d, ratio)
        b = eta[:, i]
        scale = float(np.max(np.abs(b)))
        if scale == 0:
            continue
        try:
            V[:, i] = scale * seqsolve.solve_contracting(lam_diag[i], lam_d, b / scale,
                                                         thresholds=thresholds)
        except seqsolve.SequenceNonConvergenceError:
            V[:, i] = scale * seqsolve.solve_constant(lam_diag[i], lam_d, b / scale)
    W_d = np.einsum("kij,kj->ki", P_bar, V)
    if np.iscomplexobj(W_d):
        W_d = W_d.real
    if return_correction:
        return W_d, OrderCorrection(E_d=E_d, V_d=V, eta_d=eta)
    return W_d


# ------------------------------------------------------- full recursion

def _branch_setup(sol, branch):
    if branch not in BRANCHES:
        raise ValueError(f"branch must be one of {BRANCHES}")
    lam = sol.lam
    if classify_center(lam.lam1, lam.lam2) != "hyperbolic":
        raise SeparatrixPreconditionError(
            f"center multipliers {lam.lam1:.6g}, {lam.lam2:.6g} are not real hyperbolic; "
            "no separatrix exists")
    if not lam.is_constant:
        sol = rescale_solution(sol)
    diag = diagonalize_floquet(sol)
    if diag.defective:
        raise SeparatrixPreconditionError("center block is defective")
    lam_diag = np.real_if_close(np.diag(diag.Lam_bar), tol=1e6)
    if np.iscomplexobj(lam_diag):
        raise SeparatrixPreconditionError("diagonal multipliers are not real")
    lam_diag = lam_diag.astype(float)
    centre = lam_diag[:2]
    col = int(np.argmin(np.abs(centre)) if branch == "weak_stable" else np.argmax(np.abs(centre)))
    return sol, _realify(diag.P_bar), lam_diag, col


def _recurse(smap, X, P, lam_diag, col, alpha, degree, thresholds, check_tol):
    n = X.shape[0]
    lam = lam_diag[col]
    W = np.zeros((n, degree + 1, 4))
    W[:, 0] = X
    W[:, 1] = alpha * P[:, :, col]
    for d in range(2, degree + 1):
        E = order_error(smap, W[:, :d], lam, d, check_tol=check_tol)
        W[:, d] = solve_order(E, P, lam_diag, lam, d, thresholds=thresholds)
    return W


def _growth_fit(W):
    norms = np.max(np.abs(W[:, 1:]), axis=(0, 2))
    j = np.arange(1, W.shape[1])
    keep = norms > 0
    if keep.sum() < 2:
        return 0.0, float(np.log(norms[0])) if norms[0] > 0 else 0.0
    slope, icpt = np.polyfit(j[keep], np.log(norms[keep]), 1)
    return float(slope), float(icpt)


def parameterize(smap, sol, branch="weak_unstable", *, d_max=20, alpha="auto", prelim_degree=6,
                 thresholds=seqsolve.DEFAULT_THRESHOLDS, check_tol=None, max_refits=2):
    """Taylor coefficients of one separatrix branch through degree ``d_max``.

    ``alpha`` scales ``W_1``; with ``"auto"`` it is chosen from an
    exponential fit to a preliminary low-degree run so that the coefficient
    norms stay roughly level, then refitted on the full run if the top
    coefficient lands outside ``[1e-12, 1e3]``.
    """
    if d_max < 1:
        raise ValueError("d_max must be at least 1")
    sol, P, lam_diag, col = _branch_setup(sol, branch)
    if hasattr(smap, "at"):
        smap = smap.at(sol.eps)
    X = np.asarray(sol.X, dtype=float)
    rec = lambda a, deg: _recurse(smap, X, P, lam_diag, col, a, deg, thresholds, check_tol)
    if alpha == "auto":
        pre = rec(1.0, min(d_max, max(prelim_degree, 2)))
        slope, _ = _growth_fit(pre)
        a = float(np.exp(-slope))
        W = rec(a, d_max)
        for _ in range(max_refits):
            top = float(np.max(np.abs(W[:, -1])))
            if 1e-12 <= top <= 1e3 or d_max < 2:
                break
            slope, _ = _growth_fit(W)
            a *= float(np.exp(-slope))
            W = rec(a, d_max)
    else:
        a = float(alpha)
        if a == 0:
            raise ValueError("alpha must be nonzero")
        W = rec(a, d_max)
    log.info("separatrix %s: lam=%.12g alpha=%.6g |W_d|=%.3e", branch, lam_diag[col], a,
             float(np.max(np.abs(W[:, -1]))))
    return SeparatrixParameterization(sol.label, branch, float(lam_diag[col]), W, a, col,
                                      eps=float(sol.eps))


# ----------------------------------------------------- domains, samples

def invariance_residual(smap, param, k, s, *, escape=1e2):
    """``|F(W(k, s)) - W(k+1, lam s)|_inf`` for broadcast ``k``, ``s``.

    Points whose image cannot be computed get ``inf``, and so do points
    farther than ``escape`` from the orbit point or whose predicted image is:
    the truncated series has clearly diverged there and integrating them
    only burns steps.
    """
    k, s = np.broadcast_arrays(np.asarray(k), np.asarray(s, dtype=float))
    pts = param.evaluate(k, s)
    tgt = param.evaluate(k + 1, param.lam * s)
    far = (np.max(np.abs(pts - param.W[k % param.n, 0]), axis=-1) > escape) \
        | (np.max(np.abs(tgt - param.W[(k + 1) % param.n, 0]), axis=-1) > escape) \
        | ~np.all(np.isfinite(pts), axis=-1)
    r = np.full(k.shape, np.inf)
    if (~far).any():
        img = np.asarray(smap.evaluate(pts[~far], mask_nonfinite=True))
        r[~far] = np.max(np.abs(img - tgt[~far]), axis=-1)
    return np.where(np.isfinite(r), r, np.inf)


def fundamental_domain(smap, param, E_tol=1e-6, *, n_grid=64, s_max=10.0, rtol=1e-4,
                       max_probes=200):
    """Largest ``D_k`` with invariance residual below ``E_tol`` for ``|s| <= D_k``.

    Bisection on ``[0, s_max]``; each probe checks ``n_grid`` values of
    ``|s|`` (both signs) in the not-yet-verified part ``(lo, mid]``, so a
    residual bump inside the interval cannot be skipped over. Returns a copy
    of ``param`` with ``D`` and ``E_tol`` filled in.
    """
    if E_tol <= 0:
        raise ValueError("E_tol must be positive")
    if hasattr(smap, "at"):
        smap = smap.at(param.eps)
    n = param.n
    ks = np.arange(n)
    r0 = invariance_residual(smap, param, ks, np.zeros(n))
    if np.any(r0 >= E_tol):
        raise InconsistentParameterizationError(
            f"residual {r0.max():.3e} at s = 0 already exceeds E_tol = {E_tol:g}")
    lo = np.zeros(n)
    hi = np.full(n, float(s_max))
    frac = np.arange(1, n_grid + 1) / n_grid

    def probe(a, b, rows):
        mags = a[:, None] + (b - a)[:, None] * frac[None, :]
        s = np.concatenate([mags, -mags], axis=1)
        kk = np.broadcast_to(rows[:, None], s.shape)
        r = invariance_residual(smap, param, kk, s)
        return np.all(r < E_tol, axis=1)

    ok = probe(lo, hi, ks)
    lo[ok] = hi[ok]
    active = ~ok
    for _ in range(max_probes):
        if not active.any():
            break
        rows = ks[active]
        mid = 0.5 * (lo[rows] + hi[rows])
        passed = probe(lo[rows], mid, rows)
        lo[rows[passed]] = mid[passed]
        hi[rows[~passed]] = mid[~passed]
        done = (hi - lo) <= rtol * np.maximum(lo, 1e-300)
        done |= hi <= 1e-14 * s_max
        active &= ~done
    if np.any(lo == 0):
        raise InconsistentParameterizationError("residual exceeds E_tol arbitrarily close to s = 0")
    return replace(param, D=lo, E_tol=float(E_tol))


def sample_curves(param, n_per_k, D=None):
    """Rows ``(k, s, x, y, px, py)`` with ``n_per_k`` even samples of ``[-D_k, D_k]``.

    ``n_per_k = 1`` gives the orbit points (``s = 0``). The map is never
    applied here.
    """
    if n_per_k < 1:
        raise ValueError("n_per_k must be positive")
    D = param.D if D is None else np.broadcast_to(np.asarray(D, dtype=float), (param.n,))
    if D is None:
        raise ValueError("no domain radii; run fundamental_domain first")
    rows = []
    for k in range(param.n):
        s = np.zeros(1) if n_per_k == 1 else np.linspace(-D[k], D[k], n_per_k)
        pts = param.evaluate(np.full(s.shape, k), s)
        rows.append(np.column_stack([np.full(s.shape, k, dtype=float), s, pts]))
    return np.concatenate(rows, axis=0)
