from __future__ import annotations

import numpy as np
import pytest

from subharmonic.integrate import (
    IntegrationError,
    IntegratorConfig,
    StroboscopicMap,
    flow,
    flow_with_variational,
    integrate_batch,
    jet_flow,
    strobe,
    strobe_jacobian,
    strobe_jet,
)
from subharmonic.orbits import pendulum_resonant_seed
from subharmonic.systems import (
    J4,
    MU_JUPITER_GANYMEDE,
    forced_pendulum_test,
    jupiter_europa_ganymede,
    pcr3bp,
)
from subharmonic.taylor import TruncatedSeriesVector

P3 = pcr3bp(MU_JUPITER_GANYMEDE)
P4 = jupiter_europa_ganymede()
PEND = forced_pendulum_test()
X_P3 = np.array([0.6, 0.1, -0.05, 0.72])
NUMPY = IntegratorConfig(compiled=False)


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(abs_tol=0)
    with pytest.raises(ValueError):
        IntegratorConfig(max_steps=0)


def test_generic_batch_integrator_on_linear_ode():
    y0 = np.array([[1.0, 2.0], [-1.0, 0.5]])
    rates = np.array([-0.5, 0.3])
    y = integrate_batch(lambda t, y: y * rates, 0.0, y0, 3.0)
    np.testing.assert_allclose(y, y0 * np.exp(3.0 * rates), rtol=1e-11)


def test_zero_time_is_identity():
    assert np.array_equal(flow(P3, 0.0, X_P3, 0.0, 0.0), X_P3)
    x, DF = flow_with_variational(P4, 1e-5, X_P3, 0.3, 0.0)
    assert np.array_equal(x, X_P3)
    assert np.array_equal(DF, np.eye(4))


def test_pcr3bp_energy_conservation():
    x = flow(P3, 0.0, X_P3, 0.0, 10.0)
    assert abs(P3.hamiltonian(x, 0, 0) - P3.hamiltonian(X_P3, 0, 0)) < 1e-10


def test_pcr3bp_time_reversal():
    R = np.diag([1.0, -1.0, -1.0, 1.0])
    fwd = flow(P3, 0.0, X_P3, 0.0, 4.0)
    back = flow(P3, 0.0, R @ X_P3, 0.0, -4.0)
    np.testing.assert_allclose(R @ fwd, back, atol=1e-9)


def test_energy_drift_decreases_with_tolerance():
    drifts = []
    for tol in (1e-7, 1e-9, 1e-11, 1e-13):
        cfg = IntegratorConfig(abs_tol=tol, rel_tol=tol)
        x = flow(P3, 0.0, X_P3, 0.0, 50.0, cfg)
        drifts.append(abs(P3.hamiltonian(x, 0, 0) - P3.hamiltonian(X_P3, 0, 0)))
    assert all(b < a for a, b in zip(drifts, drifts[1:])), drifts


@pytest.mark.parametrize("system,eps", [(P3, 0.0), (P4, 2.5e-5), (PEND, 0.05)])
def test_variational_is_symplectic_and_matches_fd(system, eps):
    x0 = X_P3 if system is not PEND else np.array([0.1, 0.3, -0.1, 0.4])
    t = 6.0
    x, DF = flow_with_variational(system, eps, x0, 0.4, t)
    assert np.max(np.abs(DF.T @ J4 @ DF - J4)) < 1e-9
    h = 1e-6
    for i in range(4):
        e = np.zeros(4)
        e[i] = h
        col = (flow(system, eps, x0 + e, 0.4, t) - flow(system, eps, x0 - e, 0.4, t)) / (2 * h)
        np.testing.assert_allclose(DF[:, i], col, rtol=1e-5, atol=1e-5 * np.abs(col).max())
    np.testing.assert_allclose(x, flow(system, eps, x0, 0.4, t), atol=1e-13)


def test_constant_jet_is_the_flow():
    V = TruncatedSeriesVector.from_point(X_P3, 4)
    out = jet_flow(P4, 2e-5, V, 0.2, 5.0)
    assert isinstance(out, TruncatedSeriesVector)
    np.testing.assert_allclose(out.coeffs[:, 0], flow(P4, 2e-5, X_P3, 0.2, 5.0), atol=1e-13)
    assert np.all(out.coeffs[:, 1:] == 0)


def test_jet_orders_one_and_two():
    v = np.array([0.3, -0.2, 0.5, 0.1])
    w = np.array([0.05, 0.1, -0.02, 0.03])
    V = np.zeros((4, 3))
    V[:, 0], V[:, 1], V[:, 2] = X_P3, v, w
    t = 5.0
    out = jet_flow(P4, 2e-5, V, 0.2, t)
    _, DF = flow_with_variational(P4, 2e-5, X_P3, 0.2, t)
    np.testing.assert_allclose(out[:, 1], DF @ v, rtol=1e-6)
    curve = lambda s: X_P3 + s * v + s * s * w
    f0 = flow(P4, 2e-5, X_P3, 0.2, t)

    def second_difference(h):
        return (flow(P4, 2e-5, curve(-h), 0.2, t) - 2 * f0 + flow(P4, 2e-5, curve(h), 0.2, t)) / (2 * h * h)

    # Richardson extrapolation removes the O(h^2) truncation term
    second = (4 * second_difference(1e-3) - second_difference(2e-3)) / 3
    np.testing.assert_allclose(out[:, 2], second, rtol=1e-4, atol=1e-4 * np.abs(second).max())


def test_jet_truncation_stability():
    rng = np.random.default_rng(1)
    V = np.zeros((4, 9))
    V[:, 0] = X_P3
    V[:, 1:7] = rng.normal(0, 0.05, (4, 6))
    short = jet_flow(P4, 2e-5, V[:, :7], 0.2, 6.0)
    long = jet_flow(P4, 2e-5, V, 0.2, 6.0)
    scale = np.abs(long[:, :7]).max(axis=0)
    assert np.all(np.abs(short - long[:, :7]) <= 1e-10 * np.maximum(scale, 1e-300))


@pytest.mark.parametrize("system,eps", [(P4, 2.5e-5), (PEND, 0.05)])
def test_compiled_and_numpy_paths_agree(system, eps):
    x0 = X_P3 if system is P4 else np.array([0.1, 0.3, -0.1, 0.4])
    X = x0 + np.random.default_rng(2).normal(0, 0.01, (3, 4))
    np.testing.assert_allclose(flow(system, eps, X, 0.5, 6.0),
                               flow(system, eps, X, 0.5, 6.0, NUMPY), atol=1e-10)
    a = flow_with_variational(system, eps, X, 0.5, 6.0)[1]
    b = flow_with_variational(system, eps, X, 0.5, 6.0, NUMPY)[1]
    np.testing.assert_allclose(a, b, atol=1e-9 * np.abs(b).max())
    V = np.zeros((3, 4, 4))
    V[..., 0] = X
    V[..., 1] = 0.1
    V[..., 2] = -0.02
    a = jet_flow(system, eps, V, 0.5, 6.0)
    b = jet_flow(system, eps, V, 0.5, 6.0, NUMPY)
    # step control follows order 0 only, so higher orders carry looser local error
    scale = np.abs(b).max(axis=(0, 1))
    assert np.all(np.abs(a - b).max(axis=(0, 1)) <= np.array([1e-9, 1e-8, 1e-7, 1e-6]) * scale)


def test_batch_shapes_are_preserved():
    X = np.tile(X_P3, (2, 3, 1))
    assert flow(P3, 0.0, X, 0.0, 1.0).shape == (2, 3, 4)
    x, DF = flow_with_variational(P3, 0.0, X, 0.0, 1.0)
    assert x.shape == (2, 3, 4) and DF.shape == (2, 3, 4, 4)


def test_collision_raises_and_masking_gives_nan():
    hit = np.array([-MU_JUPITER_GANYMEDE + 1e-3, 0.0, 0.0, 0.0])   # falls into the big primary
    X = np.stack([X_P3, hit])
    for cfg in (IntegratorConfig(max_steps=2000), IntegratorConfig(max_steps=2000, compiled=False)):
        with pytest.raises(IntegrationError) as info:
            flow(P3, 0.0, X, 0.0, 5.0, cfg)
        assert info.value.t_last >= 0
        out = flow(P3, 0.0, X, 0.0, 5.0, cfg, mask_nonfinite=True)
        assert np.all(np.isfinite(out[0])) and np.all(np.isnan(out[1]))


def test_strobe_wrappers_and_period():
    m = StroboscopicMap(P4, 0.0, 0.0)
    assert m.period == pytest.approx(6.1966, rel=1e-12)
    np.testing.assert_allclose(strobe(m, X_P3), flow(P3, 0.0, X_P3, 0.0, m.period), atol=1e-10)
    x, DF = strobe_jacobian(m, X_P3)
    assert np.max(np.abs(DF.T @ J4 @ DF - J4)) < 1e-9
    V = TruncatedSeriesVector.from_point(X_P3, 2)
    np.testing.assert_allclose(strobe_jet(m, V).coeffs[:, 0], x, atol=1e-13)
    with pytest.raises(ValueError):
        StroboscopicMap(P4, -1.0)
    with pytest.raises(ValueError):
        StroboscopicMap(P3, 0.0)


def test_resonant_seed_returns_after_q_iterates():
    m = StroboscopicMap(PEND, 0.0, 0.0)
    x0, _ = pendulum_resonant_seed(PEND, "2/7")
    x = x0
    for _ in range(7):
        x = m.evaluate(x)
    np.testing.assert_allclose(x, x0, atol=1e-8)
