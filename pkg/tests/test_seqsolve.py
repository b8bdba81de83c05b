from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from subharmonic import seqsolve
from subharmonic.seqsolve import (
    DegenerateResonanceError,
    RegimeError,
    SequenceNonConvergenceError,
    SolverThresholds,
    ZeroSumError,
    rescale_constant,
    residual,
    solve_auto,
    solve_cohomological,
    solve_constant,
    solve_contracting,
    solve_unit_modulus,
)


def dense_solve(la, lb, b):
    """Oracle: the q x q cyclic system written out and solved directly."""
    q = len(b)
    la = np.broadcast_to(la, (q,))
    lb = np.broadcast_to(lb, (q,))
    M = np.zeros((q, q), dtype=np.result_type(la, lb, complex))
    for k in range(q):
        M[k, k] += la[k]
        M[k, (k + 1) % q] -= lb[k]
    return np.linalg.solve(M, b)


def rel_err(u, ref):
    return np.max(np.abs(u - ref)) / max(1.0, np.max(np.abs(ref)))


# ------------------------------------------------------------- examples

def test_contracting_example():
    np.testing.assert_allclose(solve_contracting([0.5, 0.5], [1, 1], [1, 1]), [-2, -2], rtol=1e-14)


def test_zero_rhs_gives_zero():
    assert np.all(solve_contracting([0.5, 0.3], [1, 1], [0, 0]) == 0)
    assert np.all(solve_unit_modulus(1.0, -1.0, np.zeros(3)) == 0)
    assert np.all(solve_cohomological(np.zeros(4)) == 0)


def test_contracting_matches_dense_random_q6():
    rng = np.random.default_rng(0)
    la = rng.uniform(0.1, 0.8, 6)
    lb = rng.uniform(1.0, 2.0, 6)
    b = rng.normal(size=6)
    assert rel_err(solve_contracting(la, lb, b), dense_solve(la, lb, b)) < 1e-12


def test_expanding_regime_uses_backward_map():
    rng = np.random.default_rng(1)
    la = rng.uniform(2.0, 3.0, 5)
    lb = rng.uniform(0.2, 1.0, 5)
    b = rng.normal(size=5)
    u = solve_contracting(la, lb, b)
    assert rel_err(u, dense_solve(la, lb, b)) < 1e-12


def test_unit_modulus_example():
    np.testing.assert_allclose(solve_unit_modulus(1.0, -1.0, [1, 0, 0]), [0.5, 0.5, -0.5])


def test_unit_modulus_elliptic_pair():
    rng = np.random.default_rng(2)
    phi = 0.7
    la, lb = np.exp(1j * phi), np.exp(-1j * phi)
    b = rng.normal(size=5) + 1j * rng.normal(size=5)
    u = solve_unit_modulus(la, lb, b)
    assert rel_err(u, dense_solve(la, lb, b)) < 1e-12
    assert np.max(np.abs(residual(la, lb, b, u))) < 1e-12 * max(1, np.max(np.abs(b)))


def test_unit_modulus_degenerate():
    with pytest.raises(DegenerateResonanceError):
        solve_unit_modulus(1.0, 1.0, [1.0, -1.0])
    with pytest.raises(DegenerateResonanceError):
        solve_unit_modulus(1.0, np.exp(2j * np.pi / 3), [1.0, 0.0, 0.0])


def test_cohomological_example():
    np.testing.assert_array_equal(solve_cohomological([1, -2, 1]), [0, -1, 1])


def test_cohomological_zero_sum_error():
    with pytest.raises(ZeroSumError) as info:
        solve_cohomological([1.0, 1.0])
    assert info.value.total == pytest.approx(2.0)
    u = solve_cohomological([1.0, 1.0], allow_nonzero_sum=True)
    np.testing.assert_array_equal(u, [0.0, -1.0])


def test_mixed_regime_is_an_error():
    with pytest.raises(RegimeError):
        solve_contracting([0.5, 2.0], [1.0, 1.0], [1.0, 1.0])


def test_iteration_cap_reports_contraction():
    th = SolverThresholds(max_sweeps=3)
    with pytest.raises(SequenceNonConvergenceError) as info:
        solve_contracting([0.99, 0.99], [1, 1], [1, 2], thresholds=th)
    assert info.value.contraction == pytest.approx(0.99)


def test_solve_auto_dispatch():
    # uniform contraction, unit-modulus constant, equal multipliers, other constants
    np.testing.assert_allclose(solve_auto(np.array([0.5, 0.4]), 1.0, [1, 1]),
                               dense_solve([0.5, 0.4], 1.0, [1, 1]).real, rtol=1e-13)
    np.testing.assert_allclose(solve_auto(1.0, -1.0, [1.0, 0, 0]), [0.5, 0.5, -0.5])
    np.testing.assert_allclose(solve_auto(1.0, 1.0, [1.0, -2.0, 1.0]), [0, -1, 1])
    np.testing.assert_allclose(solve_auto(3.0, 1.0, [1.0, 2.0]), dense_solve(3.0, 1.0, [1, 2]).real)
    with pytest.raises(RegimeError):
        solve_auto(np.array([0.5, 2.0]), 1.0, [1.0, 1.0])


def test_solve_constant_close_to_unit_ratio():
    # |lb/la| = 1 + 1e-6: fixed-point iteration would crawl, the closed form does not
    la, lb = 1.0, 1.0 + 1e-6
    b = np.array([1.0, -0.5, 0.25, 2.0])
    u = solve_constant(la, lb, b)
    assert np.max(np.abs(residual(la, lb, b, u))) < 1e-12 * np.max(np.abs(u))


def test_rescale_examples():
    vs = np.eye(4)[:2]
    _, _, r = rescale_constant(vs, vs, [0.3, 0.3], [2.0, 2.0])
    np.testing.assert_allclose(r.a_s, [1, 1])
    assert r.lam_s_bar == pytest.approx(0.3)
    _, _, r = rescale_constant(vs, vs, [0.5, 0.125], [2.0, 8.0])
    assert r.lam_s_bar == pytest.approx(0.25)
    np.testing.assert_allclose(r.a_s, [1, 2])
    lam = np.array([0.5, 0.125])
    np.testing.assert_allclose(r.a_s * lam, np.roll(r.a_s, -1) * r.lam_s_bar, rtol=1e-13)


def test_rescale_rejects_nonpositive():
    vs = np.eye(4)[:2]
    with pytest.raises(ValueError):
        rescale_constant(vs, vs, [0.5, -0.1], [2.0, 2.0])


def test_trailing_axes_are_independent_rhs():
    rng = np.random.default_rng(4)
    la = rng.uniform(0.1, 0.5, 4)
    b = rng.normal(size=(4, 3))
    u = solve_contracting(la, 1.0, b)
    for j in range(3):
        np.testing.assert_allclose(u[:, j], solve_contracting(la, 1.0, b[:, j]), rtol=1e-14)


# -------------------------------------------------------- properties

@st.composite
def contracting_instance(draw):
    q = draw(st.integers(2, 8))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    lb = rng.uniform(0.5, 2.0, q) * rng.choice([-1, 1], q)
    ratio = rng.uniform(0.05, 0.95, q)
    la = ratio * np.abs(lb) * np.exp(1j * rng.uniform(0, 2 * np.pi, q))
    b = rng.normal(size=q) + 1j * rng.normal(size=q)
    if draw(st.booleans()):
        la, lb = lb, la   # expanding regime
    return la, lb, b


@settings(max_examples=50, deadline=None)
@given(contracting_instance())
def test_contracting_matches_dense_oracle(inst):
    la, lb, b = inst
    u = solve_contracting(la, lb, b)
    assert rel_err(u, dense_solve(la, lb, b)) < 1e-12
    assert np.max(np.abs(residual(la, lb, b, u))) < 1e-13 * max(1.0, np.max(np.abs(b))) * 10


@settings(max_examples=50, deadline=None)
@given(contracting_instance())
def test_contraction_rate(inst):
    la, lb, b = inst
    C = np.max(np.abs(la / lb))
    if C > 1:
        C = np.max(np.abs(lb / la))
    hist = []
    u = solve_contracting(la, lb, b, history=hist)
    hist = np.array(hist)
    # differences of iterates carry a few ulps of |u| from forming a*u - c
    ulps = 8 * np.finfo(float).eps * max(1.0, np.max(np.abs(u)))
    assert np.all(hist[1:] <= (C + 1e-12) * hist[:-1] + ulps)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=9))
def test_cohomological_forced_zero_sum(b):
    b = np.array(b) - np.mean(b)
    u = solve_cohomological(b)
    assert u[0] == 0
    assert abs(u[-1] - u[0] - b[-1]) < 1e-14 * max(1, np.max(np.abs(b))) * len(b)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2 ** 32 - 1))
def test_rescale_identity(q, seed):
    rng = np.random.default_rng(seed)
    ls = rng.uniform(0.05, 0.9, q)
    lu = rng.uniform(1.1, 20.0, q)
    v = rng.normal(size=(q, 4))
    vs, vu, r = rescale_constant(v, v, ls, lu)
    np.testing.assert_allclose(r.a_s * ls, np.roll(r.a_s, -1) * r.lam_s_bar, rtol=1e-13)
    np.testing.assert_allclose(r.a_u * lu, np.roll(r.a_u, -1) * r.lam_u_bar, rtol=1e-13)
    assert np.prod(ls) == pytest.approx(r.lam_s_bar ** q, rel=1e-13)
    np.testing.assert_allclose(vs, v * r.a_s[:, None])


def test_default_thresholds_exposed():
    assert seqsolve.DEFAULT_THRESHOLDS.max_sweeps == 10_000
    assert seqsolve.DEFAULT_THRESHOLDS.stop_rtol == 1e-14
