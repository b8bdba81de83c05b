"""Subharmonic periodic orbits of forced Hamiltonian systems and their separatrices.

Modules:

``taylor``      truncated Taylor series arithmetic (automatic differentiation)
``integrate``   adaptive DOP853 flows, variational equations and jet transport
``systems``     CCR4BP, PCR3BP and a forced pendulum test system
``maps``        explicit symplectic maps with the same interface
``seqsolve``    cyclic scalar sequence equations
``spo``         quasi-Newton computation and continuation of periodic orbits
``separatrix``  Taylor parameterization of weak stable and unstable manifolds
``io``, ``cli`` configuration, bit-exact persistence and the command line
"""

from .integrate import IntegratorConfig, StroboscopicMap
from .maps import ExplicitMap
from .spo import PeriodicOrbitSolution, continue_family, initialize_solution, seed_unperturbed
from .systems import ResonanceLabel, ccr4bp, forced_pendulum_test, jupiter_europa_ganymede, pcr3bp

__version__ = "0.1.0"

__all__ = [
    "IntegratorConfig",
    "StroboscopicMap",
    "ExplicitMap",
    "PeriodicOrbitSolution",
    "continue_family",
    "initialize_solution",
    "seed_unperturbed",
    "ResonanceLabel",
    "ccr4bp",
    "forced_pendulum_test",
    "jupiter_europa_ganymede",
    "pcr3bp",
]
