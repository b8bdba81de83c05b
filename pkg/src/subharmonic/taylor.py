"""Truncated single-variable Taylor series.

Coefficients live in the last axis of a numpy array, so one
``TruncatedSeries`` can hold a whole batch of series of the same degree.
Every operation is exact in coefficients ``0..d``: coefficient ``i`` of an
output depends only on coefficients ``0..i`` of the inputs.
"""

from __future__ import annotations

from functools import lru_cache
import numbers

import numpy as np

__all__ = [
    "DegreeMismatchError",
    "ZeroConstantError",
    "TruncatedSeries",
    "TruncatedSeriesVector",
    "series_add",
    "series_mul",
    "series_div",
    "series_pow",
    "series_sin_cos",
    "series_eval",
    "sin",
    "cos",
    "constant",
    "variable",
]


class DegreeMismatchError(ValueError):
    pass


class ZeroConstantError(ZeroDivisionError):
    pass


@lru_cache(maxsize=64)
def _toeplitz_index(n):
    k = np.arange(n)
    diff = k[:, None] - k[None, :]
    mask = diff >= 0
    return np.where(mask, diff, 0), mask


def _freeze(arr):
    arr = np.array(arr, copy=True)
    if arr.dtype.kind not in "fc":
        arr = arr.astype(float)
    arr.flags.writeable = False
    return arr


class TruncatedSeries:
    """Degree-``d`` truncated power series, possibly batched.

    ``coeffs[..., i]`` is the coefficient of ``s**i``. Instances are
    immutable; arithmetic with plain scalars or arrays (broadcast over the
    batch shape) acts on the constant term.
    """

    __slots__ = ("_c",)
    __array_ufunc__ = None

    def __init__(self, coeffs):
        c = np.asarray(coeffs)
        if c.ndim == 0:
            raise ValueError("coefficients need at least one entry")
        self._c = c if (not c.flags.writeable and c.dtype.kind in "fc") else _freeze(c)

    @classmethod
    def _wrap(cls, arr):
        obj = cls.__new__(cls)
        arr.flags.writeable = False
        obj._c = arr
        return obj

    @property
    def coeffs(self):
        return self._c

    @property
    def degree(self):
        return self._c.shape[-1] - 1

    @property
    def batch_shape(self):
        return self._c.shape[:-1]

    def __len__(self):
        return self._c.shape[-1]

    def __getitem__(self, i):
        return self._c[..., i]

    def __repr__(self):
        return f"TruncatedSeries(degree={self.degree}, coeffs={self._c!r})"

    def truncate(self, degree):
        """Drop (or zero-pad to) the given degree."""
        n = self._c.shape[-1]
        if degree + 1 <= n:
            return TruncatedSeries._wrap(self._c[..., : degree + 1].copy())
        pad = np.zeros(self._c.shape[:-1] + (degree + 1 - n,), dtype=self._c.dtype)
        return TruncatedSeries._wrap(np.concatenate([self._c, pad], axis=-1))

    # -- coercion ---------------------------------------------------------
    def _lift(self, other):
        if isinstance(other, TruncatedSeries):
            if other.degree != self.degree:
                raise DegreeMismatchError(
                    f"degrees differ: {self.degree} vs {other.degree}")
            return other._c
        val = np.asarray(other)
        if val.dtype == object:
            return NotImplemented
        shape = np.broadcast_shapes(self._c.shape[:-1], val.shape)
        out = np.zeros(shape + self._c.shape[-1:], dtype=np.result_type(self._c, val))
        out[..., 0] = val
        return out

    # -- arithmetic -------------------------------------------------------
    def __neg__(self):
        return TruncatedSeries._wrap(-self._c)

    def __pos__(self):
        return self

    def __add__(self, other):
        if isinstance(other, TruncatedSeries):
            return series_add(self, other)
        if isinstance(other, (numbers.Number, np.ndarray, np.generic)):
            val = np.asarray(other)
            c = self._c + np.zeros(val.shape + (1,), dtype=val.dtype)
            c[..., 0] += val
            return TruncatedSeries._wrap(c)
        return NotImplemented

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, TruncatedSeries):
            return series_mul(self, other)
        if isinstance(other, (numbers.Number, np.ndarray, np.generic)):
            val = np.asarray(other)
            return TruncatedSeries._wrap(self._c * val[..., None])
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, TruncatedSeries):
            return series_div(self, other)
        if isinstance(other, (numbers.Number, np.ndarray, np.generic)):
            val = np.asarray(other)
            return TruncatedSeries._wrap(self._c / val[..., None])
        return NotImplemented

    def __rtruediv__(self, other):
        lifted = self._lift(other)
        if lifted is NotImplemented:
            return NotImplemented
        return series_div(TruncatedSeries._wrap(lifted), self)

    def __pow__(self, alpha):
        return series_pow(self, alpha)

    def __call__(self, s):
        return series_eval(self, s)

    def sin(self):
        return series_sin_cos(self)[0]

    def cos(self):
        return series_sin_cos(self)[1]


def constant(value, degree):
    """Constant series ``value + 0 s + ...`` (value may be an array)."""
    val = np.asarray(value)
    c = np.zeros(val.shape + (degree + 1,), dtype=np.result_type(val, float))
    c[..., 0] = val
    return TruncatedSeries._wrap(c)


def variable(value, degree):
    """The series ``value + s`` (needs degree >= 1 to carry ``s``)."""
    val = np.asarray(value)
    c = np.zeros(val.shape + (degree + 1,), dtype=np.result_type(val, float))
    c[..., 0] = val
    if degree >= 1:
        c[..., 1] = 1.0
    return TruncatedSeries._wrap(c)


def _check_pair(a, b):
    if a.degree != b.degree:
        raise DegreeMismatchError(f"degrees differ: {a.degree} vs {b.degree}")


def series_add(a, b):
    _check_pair(a, b)
    return TruncatedSeries._wrap(a.coeffs + b.coeffs)


def series_mul(a, b):
    """Cauchy product truncated at the common degree."""
    _check_pair(a, b)
    idx, mask = _toeplitz_index(a.degree + 1)
    toe = a.coeffs[..., idx] * mask
    out = np.matmul(toe, b.coeffs[..., None])[..., 0]
    return TruncatedSeries._wrap(out)


def series_div(f, g):
    """Quotient ``f/g`` by the standard recurrence; needs ``g_0 != 0``."""
    _check_pair(f, g)
    fc, gc = np.broadcast_arrays(f.coeffs, g.coeffs)
    g0 = gc[..., 0]
    if np.any(g0 == 0):
        raise ZeroConstantError("divisor has zero constant term")
    n = fc.shape[-1]
    d = np.zeros(fc.shape, dtype=np.result_type(fc, gc))
    d[..., 0] = fc[..., 0] / g0
    for i in range(1, n):
        acc = np.einsum("...j,...j->...", d[..., :i], gc[..., i:0:-1])
        d[..., i] = (fc[..., i] - acc) / g0
    return TruncatedSeries._wrap(d)


def _is_integer(alpha):
    return float(alpha).is_integer()


def _int_power(f, m):
    one = constant(np.ones(f.batch_shape), f.degree)
    result, base = one, f
    while m:
        if m & 1:
            result = series_mul(result, base)
        m >>= 1
        if m:
            base = series_mul(base, base)
    return result


def series_pow(f, alpha):
    """``f**alpha``.

    Uses the recurrence ``h_i = 1/(i f_0) sum_{j=1..i} (alpha j - i + j) f_j h_{i-j}``
    whenever ``f_0`` is a positive real. Integer exponents on series whose
    constant term is zero or negative fall back to repeated products.
    """
    alpha = float(alpha)
    c = f.coeffs
    f0 = c[..., 0]
    positive = np.all(np.isreal(f0)) and np.all(np.real(f0) > 0)
    if not positive:
        if not _is_integer(alpha):
            raise ValueError("non-integer power needs a positive constant term")
        m = int(alpha)
        if m >= 0:
            return _int_power(f, m)
        return series_div(constant(np.ones(f.batch_shape), f.degree), _int_power(f, -m))
    n = c.shape[-1]
    h = np.zeros(c.shape, dtype=c.dtype)
    h[..., 0] = f0 ** alpha
    j = np.arange(1, n)
    for i in range(1, n):
        w = alpha * j[:i] - i + j[:i]
        acc = np.einsum("...j,j,...j->...", c[..., 1:i + 1], w, h[..., i - 1::-1])
        h[..., i] = acc / (i * f0)
    return TruncatedSeries._wrap(h)


def series_sin_cos(f):
    """Return ``(sin f, cos f)`` through the coupled recurrences."""
    c = f.coeffs
    n = c.shape[-1]
    s = np.zeros(c.shape, dtype=c.dtype)
    co = np.zeros(c.shape, dtype=c.dtype)
    s[..., 0] = np.sin(c[..., 0])
    co[..., 0] = np.cos(c[..., 0])
    jf = c * np.arange(n)
    for i in range(1, n):
        s[..., i] = np.einsum("...j,...j->...", jf[..., 1:i + 1], co[..., i - 1::-1]) / i
        co[..., i] = -np.einsum("...j,...j->...", jf[..., 1:i + 1], s[..., i - 1::-1]) / i
    return TruncatedSeries._wrap(s), TruncatedSeries._wrap(co)


def series_eval(f, s):
    """Horner evaluation. ``s`` broadcasts against the batch shape."""
    c = f.coeffs if isinstance(f, TruncatedSeries) else np.asarray(f)
    s = np.asarray(s)
    out = np.zeros(np.broadcast_shapes(c.shape[:-1], s.shape), dtype=np.result_type(c, s))
    for i in range(c.shape[-1] - 1, -1, -1):
        out = out * s + c[..., i]
    return out


def sin(u):
    if isinstance(u, TruncatedSeries):
        return series_sin_cos(u)[0]
    return np.sin(u)


def cos(u):
    if isinstance(u, TruncatedSeries):
        return series_sin_cos(u)[1]
    return np.cos(u)


class TruncatedSeriesVector:
    """Four series of one degree: the jet of a point ``(x, y, px, py)``.

    ``coeffs`` has shape ``(..., 4, d + 1)``.
    """

    __slots__ = ("_c",)

    def __init__(self, coeffs):
        c = np.asarray(coeffs)
        if c.ndim < 2 or c.shape[-2] != 4:
            raise ValueError(f"expected shape (..., 4, d+1), got {c.shape}")
        self._c = _freeze(c)

    @classmethod
    def from_components(cls, comps):
        comps = list(comps)
        if len(comps) != 4:
            raise ValueError("need exactly four components")
        deg = {c.degree for c in comps}
        if len(deg) != 1:
            raise DegreeMismatchError(f"component degrees differ: {sorted(deg)}")
        shape = np.broadcast_shapes(*(c.coeffs.shape for c in comps))
        return cls(np.stack([np.broadcast_to(c.coeffs, shape) for c in comps], axis=-2))

    @classmethod
    def from_point(cls, x, degree):
        x = np.asarray(x, dtype=float)
        c = np.zeros(x.shape + (degree + 1,))
        c[..., 0] = x
        return cls(c)

    @property
    def coeffs(self):
        return self._c

    @property
    def degree(self):
        return self._c.shape[-1] - 1

    @property
    def components(self):
        return [TruncatedSeries(self._c[..., i, :]) for i in range(4)]

    def coefficient(self, i):
        return self._c[..., :, i]

    def __call__(self, s):
        s = np.asarray(s)
        return np.moveaxis(series_eval(self._c, s[..., None]), -1, -1)

    def __repr__(self):
        return f"TruncatedSeriesVector(degree={self.degree}, shape={self._c.shape})"
