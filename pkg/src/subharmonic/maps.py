"""Symplectic maps given by explicit formulas.

An :class:`ExplicitMap` exposes the same evaluation interface as
:class:`subharmonic.integrate.StroboscopicMap`, so the orbit solver and the
separatrix code accept either. Jets are obtained by evaluating the formula
on truncated series; the Jacobian is the order-one part of a degree-1 jet.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .taylor import TruncatedSeries, sin

__all__ = ["ExplicitMap", "linear_map", "froeschle_map"]


@dataclass(frozen=True)
class ExplicitMap:
    """``formula(x, y, px, py, eps)`` returns the four image components.

    The formula must use only arithmetic, ``**`` and the series-aware
    ``sin``/``cos`` from :mod:`subharmonic.taylor`.
    """

    formula: object = field(repr=False)
    eps: float = 0.0
    name: str = "explicit"

    kind = "explicit"

    def at(self, eps):
        return replace(self, eps=float(eps))

    def _apply(self, comps):
        return self.formula(*comps, self.eps)

    def evaluate(self, X, *, mask_nonfinite=False):
        X = np.asarray(X, dtype=float)
        out = self._apply([X[..., i] for i in range(4)])
        Y = np.stack(np.broadcast_arrays(*out), axis=-1).astype(float)
        if mask_nonfinite:
            Y[~np.all(np.isfinite(Y), axis=-1)] = np.nan
        return Y

    def evaluate_jet(self, W, *, mask_nonfinite=False):
        """Image of degree-``d`` series ``W`` of shape ``(..., 4, d + 1)``."""
        W = np.asarray(getattr(W, "coeffs", W))
        comps = [TruncatedSeries(W[..., i, :]) for i in range(4)]
        out = []
        for c in self._apply(comps):
            if not isinstance(c, TruncatedSeries):
                z = np.zeros(W.shape[:-2] + W.shape[-1:], dtype=W.dtype)
                z[..., 0] = c
                c = TruncatedSeries(z)
            out.append(np.broadcast_to(c.coeffs, W.shape[:-2] + W.shape[-1:]))
        res = np.stack(out, axis=-2)
        if mask_nonfinite:
            bad = ~np.all(np.isfinite(res), axis=(-2, -1))
            res = res.copy()
            res[bad] = np.nan
        return res

    def evaluate_with_jacobian(self, X):
        X = np.asarray(X, dtype=float)
        lead = X.shape[:-1]
        seed = np.zeros(lead + (4, 4, 2))
        seed[..., :, :, 0] = X[..., :, None]
        seed[..., :, :, 1] = np.eye(4)
        comps = [TruncatedSeries(seed[..., i, :, :]) for i in range(4)]
        out = self._apply(comps)
        Y = np.stack([np.broadcast_to(c.coeffs[..., 0, 0], lead) if isinstance(c, TruncatedSeries)
                      else np.broadcast_to(c, lead) for c in out], axis=-1)
        DF = np.zeros(lead + (4, 4))
        for i, c in enumerate(out):
            if isinstance(c, TruncatedSeries):
                DF[..., i, :] = c.coeffs[..., 1]
        return Y.astype(float), DF


def linear_map(A):
    """``X -> A X``; useful as an exactly solvable test case."""
    A = np.array(A, dtype=float)
    if A.shape != (4, 4):
        raise ValueError("A must be 4x4")

    def formula(x, y, px, py, eps):
        v = (x, y, px, py)
        return tuple(sum(A[i, j] * v[j] for j in range(4) if A[i, j] != 0) + 0.0 * x
                     for i in range(4))

    return ExplicitMap(formula, name="linear")


def froeschle_map(k1, k2):
    """Two standard maps coupled through ``eps sin(x + y)``.

    Kick then drift, so the map is symplectic for every ``eps``.
    """
    def formula(x, y, px, py, eps):
        c = sin(x + y)
        px1 = px + k1 * sin(x) + eps * c
        py1 = py + k2 * sin(y) + eps * c
        return x + px1, y + py1, px1, py1

    return ExplicitMap(formula, name="froeschle")
