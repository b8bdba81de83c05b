from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from subharmonic.taylor import (
    DegreeMismatchError,
    TruncatedSeries,
    TruncatedSeriesVector,
    ZeroConstantError,
    constant,
    cos,
    series_div,
    series_eval,
    series_mul,
    series_pow,
    series_sin_cos,
    sin,
    variable,
)


def S(*c):
    return TruncatedSeries(np.array(c, dtype=float))


def coeffs(deg, lo=-2.0, hi=2.0):
    return arrays(np.float64, deg + 1, elements=st.floats(lo, hi, allow_nan=False))


# ------------------------------------------------------------- examples

def test_mul_examples():
    np.testing.assert_array_equal(series_mul(S(1, 1), S(1, 1)).coeffs, [1, 2])
    a = S(0.3, -1.2, 4.0)
    np.testing.assert_array_equal(series_mul(a, S(1, 0, 0)).coeffs, a.coeffs)
    np.testing.assert_array_equal(series_mul(S(0, 1, 0), S(0, 1, 0)).coeffs, [0, 0, 1])


def test_div_examples():
    np.testing.assert_allclose(series_div(S(1, 0, 0), S(1, 1, 0)).coeffs, [1, -1, 1])
    g = S(2.0, -3.0, 0.5)
    np.testing.assert_allclose(series_div(g, g).coeffs, [1, 0, 0], atol=1e-15)
    np.testing.assert_array_equal(series_div(S(0, 0, 0), S(2, 5, 7)).coeffs, [0, 0, 0])


def test_div_by_zero_constant():
    with pytest.raises(ZeroConstantError):
        series_div(S(1, 0), S(0, 1))


def test_pow_examples():
    np.testing.assert_allclose(series_pow(S(1, 2, 1), 0.5).coeffs, [1, 1, 0], atol=1e-15)
    f = S(1.5, 0.2, -0.7)
    np.testing.assert_allclose(series_pow(f, 1).coeffs, f.coeffs, rtol=1e-15)
    np.testing.assert_allclose(series_pow(S(4, 0, 0), -0.5).coeffs, [0.5, 0, 0])


def test_pow_rejects_nonpositive_base_for_fractional_exponent():
    with pytest.raises(ValueError):
        series_pow(S(-1.0, 1.0), 0.5)
    with pytest.raises(ValueError):
        series_pow(S(0.0, 1.0), -1.5)


def test_integer_pow_with_nonpositive_constant():
    f = S(-1.0, 2.0, 0.5)
    np.testing.assert_allclose(series_pow(f, 3).coeffs, (f * f * f).coeffs, rtol=1e-14)
    np.testing.assert_allclose(series_pow(f, -2).coeffs, (1 / (f * f)).coeffs, rtol=1e-14)


def test_sin_cos_examples():
    s, c = series_sin_cos(S(0, 0, 0))
    np.testing.assert_array_equal(s.coeffs, [0, 0, 0])
    np.testing.assert_array_equal(c.coeffs, [1, 0, 0])
    s, c = series_sin_cos(S(0, 1, 0))
    np.testing.assert_allclose(s.coeffs, [0, 1, 0])
    np.testing.assert_allclose(c.coeffs, [1, 0, -0.5])


def test_eval_examples():
    assert series_eval(S(1, 2, 3), 0.0) == 1
    assert series_eval(S(1, 2, 3), 1.0) == 6
    assert series_eval(S(2.5, 0, 0), 17.0) == 2.5


def test_degree_mismatch():
    with pytest.raises(DegreeMismatchError):
        series_mul(S(1, 2), S(1, 2, 3))
    with pytest.raises(DegreeMismatchError):
        S(1, 2) + S(1, 2, 3)


def test_scalar_arithmetic_acts_on_constant_term():
    f = S(1.0, 2.0, 3.0)
    np.testing.assert_array_equal((f + 2).coeffs, [3, 2, 3])
    np.testing.assert_array_equal((2 - f).coeffs, [1, -2, -3])
    np.testing.assert_array_equal((3 * f).coeffs, [3, 6, 9])
    np.testing.assert_allclose((f / 2).coeffs, [0.5, 1, 1.5])


def test_series_are_immutable():
    f = S(1.0, 2.0)
    with pytest.raises(ValueError):
        f.coeffs[0] = 5.0


def test_batched_series_match_individual_ones():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(5, 7))
    b = rng.normal(size=(5, 7))
    b[:, 0] = 1.0 + rng.random(5)
    batched = series_div(TruncatedSeries(a), TruncatedSeries(b)).coeffs
    for i in range(5):
        single = series_div(TruncatedSeries(a[i]), TruncatedSeries(b[i])).coeffs
        np.testing.assert_array_equal(batched[i], single)


def test_complex_coefficients():
    f = TruncatedSeries(np.array([1 + 1j, 0.5j, -0.25]))
    g = series_div(series_mul(f, f), f)
    np.testing.assert_allclose(g.coeffs, f.coeffs, rtol=1e-14)


def test_constant_and_variable_helpers():
    np.testing.assert_array_equal(constant(2.0, 3).coeffs, [2, 0, 0, 0])
    np.testing.assert_array_equal(variable(2.0, 3).coeffs, [2, 1, 0, 0])
    np.testing.assert_allclose(sin(variable(0.0, 5)).coeffs, [0, 1, 0, -1 / 6, 0, 1 / 120])
    assert cos(0.0) == 1.0


def test_vector_shape_checks():
    v = TruncatedSeriesVector.from_point([1, 2, 3, 4], 3)
    assert v.coeffs.shape == (4, 4) and v.degree == 3
    np.testing.assert_array_equal(v(0.7), [1, 2, 3, 4])
    with pytest.raises(ValueError):
        TruncatedSeriesVector(np.zeros((3, 2)))


# -------------------------------------------------------- properties

@settings(max_examples=60, deadline=None)
@given(coeffs(8), coeffs(8), coeffs(3))
def test_truncation_stability(a, b, extra):
    """Coefficients 0..d do not change when the inputs carry more terms."""
    b = b.copy()
    b[0] = 1.0 + abs(b[0])
    fa, fb = TruncatedSeries(a), TruncatedSeries(b)
    ga = TruncatedSeries(np.concatenate([a, extra]))
    gb = TruncatedSeries(np.concatenate([b, extra[::-1]]))
    pos = TruncatedSeries(np.concatenate([[2.0 + abs(a[0])], a[1:]]))
    pos_long = TruncatedSeries(np.concatenate([pos.coeffs, extra]))
    pairs = [
        (series_mul(fa, fb), series_mul(ga, gb)),
        (series_div(fa, fb), series_div(ga, gb)),
        (series_pow(pos, -1.5), series_pow(pos_long, -1.5)),
        (series_sin_cos(fa)[0], series_sin_cos(ga)[0]),
        (series_sin_cos(fa)[1], series_sin_cos(ga)[1]),
    ]
    for short, long in pairs:
        ref = long.coeffs[:9]
        np.testing.assert_allclose(short.coeffs, ref, rtol=1e-15, atol=1e-15 * np.max(np.abs(ref)))


@settings(max_examples=60, deadline=None)
@given(coeffs(20, -1, 1), coeffs(20, -1, 1))
def test_div_mul_round_trip(f, g):
    g = g.copy()
    g[0] = 1.0 + abs(g[0])
    fs, gs = TruncatedSeries(f), TruncatedSeries(g)
    q = series_div(fs, gs)
    back = series_mul(q, gs).coeffs
    # relative to the size of the terms summed in each coefficient
    terms = series_mul(TruncatedSeries(np.abs(q.coeffs)), TruncatedSeries(np.abs(g))).coeffs
    assert np.all(np.abs(back - f) <= 1e-13 * np.maximum(terms, 1.0))


@settings(max_examples=60, deadline=None)
@given(coeffs(10, -1, 1), st.integers(0, 6))
def test_integer_pow_matches_repeated_products(f, m):
    f = f.copy()
    f[0] = 0.5 + abs(f[0])
    fs = TruncatedSeries(f)
    ref = constant(1.0, 10)
    for _ in range(m):
        ref = series_mul(ref, fs)
    got = series_pow(fs, m).coeffs
    np.testing.assert_allclose(got, ref.coeffs, rtol=1e-13, atol=1e-13 * np.max(np.abs(ref.coeffs)))


@settings(max_examples=60, deadline=None)
@given(coeffs(12, -3, 3))
def test_pythagorean_identity(f):
    s, c = series_sin_cos(TruncatedSeries(f))
    one = series_mul(s, s) + series_mul(c, c)
    expect = np.zeros(13)
    expect[0] = 1.0
    scale = max(1.0, np.max(np.abs(s.coeffs)), np.max(np.abs(c.coeffs))) ** 2
    assert np.max(np.abs(one.coeffs - expect)) < 1e-14 * scale * 13


@settings(max_examples=40, deadline=None)
@given(coeffs(6, -1, 1), st.floats(-0.3, 0.3))
def test_series_eval_matches_polynomial(f, s):
    assert series_eval(TruncatedSeries(f), s) == pytest.approx(np.polyval(f[::-1], s), abs=1e-14)
