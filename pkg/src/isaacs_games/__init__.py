"""Two-player zero-sum stochastic differential games with elementary feedback strategies.

Modules:

* :mod:`.dynamics`: game specification and upper/lower Hamiltonians;
* :mod:`.pathspace`: stopping rules and elementary strategies on path prefixes;
* :mod:`.sde_engine`: Euler-Maruyama simulation under strategy pairs;
* :mod:`.isaacs_solver`: monotone finite-difference solver for the Isaacs equations;
* :mod:`.game_mc`: Monte-Carlo game values, best responses, saddle and DPP checks;
* :mod:`.perron_verify`: semi-solution candidates, certification, lattice and bump constructions;
* :mod:`.cli`: config-driven experiment runner.
"""

from .dynamics import LOWER, UPPER, ControlSet, GameProblem, HamiltonianQuery, hamiltonian
from .errors import GameError
from .presets import PRESETS, get_preset

__version__ = "0.1.0"

__all__ = ["LOWER", "UPPER", "ControlSet", "GameError", "GameProblem", "HamiltonianQuery", "PRESETS",
           "get_preset", "hamiltonian", "__version__"]
