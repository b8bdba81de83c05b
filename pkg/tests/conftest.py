from __future__ import annotations

import numpy as np
import pytest

from subharmonic.integrate import IntegratorConfig, StroboscopicMap
from subharmonic.orbits import (pendulum_resonant_seed, resonant_symmetric_orbit,
                                symmetric_phase_candidates)
from subharmonic.spo import continue_family, initialize_solution, seed_unperturbed
from subharmonic.systems import (MU_JUPITER_GANYMEDE, forced_pendulum_test,
                                 jupiter_europa_ganymede, pcr3bp)

_ACCEPTANCE = []


def pendulum_seed(label, *, sign=1.0, theta0=np.pi, tol=1e-10, cfg=None):
    system = forced_pendulum_test()
    smap0 = StroboscopicMap(system, 0.0, theta0, cfg or IntegratorConfig())
    x0, _ = pendulum_resonant_seed(system, label, sign=sign)
    X0, DK = seed_unperturbed(smap0, x0, label)
    sol, ws = initialize_solution(smap0, X0, DK, label, tol=tol)
    return smap0, sol, ws


def ganymede_seed(label, x_bracket, candidate, *, py_guess=0.9262, half_period=19.15 / 2,
                  cfg=None):
    cfg = cfg or IntegratorConfig()
    system = jupiter_europa_ganymede()
    orb = resonant_symmetric_orbit(pcr3bp(MU_JUPITER_GANYMEDE), label, x_bracket, py_guess,
                                   half_period, forcing_period=system.period, cfg=cfg)
    pt, theta0 = symmetric_phase_candidates(orb)[candidate]
    smap0 = StroboscopicMap(system, 0.0, theta0, cfg)
    X0, DK = seed_unperturbed(smap0, pt, label)
    sol, _ = initialize_solution(smap0, X0, DK, label, tol=1e-7)
    return smap0, sol


@pytest.fixture(scope="session")
def pendulum_family():
    """1/3 libration family continued to eps = 0.05 (hyperbolic center)."""
    smap0, sol, _ = pendulum_seed("1/3")
    return smap0, continue_family(smap0, sol, 0.05, 5, tol=1e-10)


@pytest.fixture(scope="session")
def pendulum_hyperbolic(pendulum_family):
    smap0, sols = pendulum_family
    return smap0.at(sols[-1].eps), sols[-1]


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
