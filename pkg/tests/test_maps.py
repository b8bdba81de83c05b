from __future__ import annotations

import numpy as np
import pytest

from subharmonic.maps import ExplicitMap, froeschle_map, linear_map
from subharmonic.systems import J4

RNG = np.random.default_rng(7)


def symplectic_matrix(rng):
    """Random symplectic 4x4 built from shears and a block rotation."""
    S1 = rng.normal(size=(2, 2))
    S2 = rng.normal(size=(2, 2))
    lower = np.block([[np.eye(2), np.zeros((2, 2))], [S1 + S1.T, np.eye(2)]])
    upper = np.block([[np.eye(2), S2 + S2.T], [np.zeros((2, 2)), np.eye(2)]])
    return lower @ upper


def test_froeschle_jacobian_matches_finite_differences():
    m = froeschle_map(0.3, -0.2).at(0.05)
    X = RNG.uniform(-1, 1, (6, 4))
    Y, DF = m.evaluate_with_jacobian(X)
    np.testing.assert_array_equal(Y, m.evaluate(X))
    h = 1e-6
    for i in range(4):
        e = np.zeros(4)
        e[i] = h
        col = (m.evaluate(X + e) - m.evaluate(X - e)) / (2 * h)
        np.testing.assert_allclose(DF[:, :, i], col, atol=1e-8)


def test_froeschle_is_symplectic():
    m = froeschle_map(0.7, 0.4).at(0.2)
    _, DF = m.evaluate_with_jacobian(RNG.uniform(-3, 3, (10, 4)))
    res = np.einsum("kji,jl,klm->kim", DF, J4, DF) - J4
    assert np.max(np.abs(res)) < 1e-13


def test_jet_matches_evaluation_along_a_curve():
    m = froeschle_map(0.3, 0.1).at(0.02)
    W = np.zeros((4, 6))
    W[:, 0] = [0.2, -0.1, 0.3, 0.05]
    W[:, 1] = [0.1, 0.2, -0.1, 0.3]
    W[:, 2] = [0.01, -0.02, 0.0, 0.03]
    img = m.evaluate_jet(W)
    for s in (1e-3, -2e-3):
        pt = np.polynomial.polynomial.polyval(s, W.T)
        approx = np.polynomial.polynomial.polyval(s, img.T)
        # truncation after degree 5 leaves an O(s^6) gap
        np.testing.assert_allclose(approx, m.evaluate(pt), atol=1e-15)


def test_linear_map_is_exact():
    A = symplectic_matrix(RNG)
    m = linear_map(A)
    X = RNG.normal(size=(3, 4))
    np.testing.assert_allclose(m.evaluate(X), X @ A.T, rtol=1e-14)
    _, DF = m.evaluate_with_jacobian(X)
    np.testing.assert_allclose(DF, np.broadcast_to(A, (3, 4, 4)), rtol=1e-14)
    W = RNG.normal(size=(2, 4, 3))
    np.testing.assert_allclose(m.evaluate_jet(W), np.einsum("ij,kjd->kid", A, W), rtol=1e-13)


def test_linear_map_shape_check():
    with pytest.raises(ValueError):
        linear_map(np.eye(3))


def test_constant_formula_output_is_broadcast():
    m = ExplicitMap(lambda x, y, px, py, eps: (x, 1.0, px, py))
    X = RNG.normal(size=(2, 4))
    Y, DF = m.evaluate_with_jacobian(X)
    assert np.all(Y[:, 1] == 1.0) and np.all(DF[:, 1] == 0)
    jet = m.evaluate_jet(np.ones((2, 4, 3)))
    np.testing.assert_array_equal(jet[:, 1], [[1.0, 0, 0]] * 2)


def test_mask_nonfinite():
    m = ExplicitMap(lambda x, y, px, py, eps: (1 / x, y, px, py))
    with np.errstate(divide="ignore"):
        Y = m.evaluate(np.array([[0.0, 1, 1, 1], [2.0, 1, 1, 1]]), mask_nonfinite=True)
    assert np.all(np.isnan(Y[0])) and Y[1, 0] == 0.5
