"""Sublinear expectations of finite-activity G-Levy processes.

The value ``E[phi(x + X_T)]`` solves a nonlinear integro-PDE whose generator
is a supremum over a product family of Levy measures and volatilities.  The
package solves that PDE on a grid, iterates it for cylinder functionals,
checks the control representation by Monte Carlo and extracts the martingale
decomposition of the resulting G-martingales.
"""
from ._backend import BACKEND
from .errors import GLevyError
from .model import LevyMeasure, UncertaintySet, VolatilityMatrix
from .payoff import TerminalFunction
from .pide import Grid, GridSolution, solve_backward

__all__ = [
    "BACKEND",
    "GLevyError",
    "Grid",
    "GridSolution",
    "LevyMeasure",
    "TerminalFunction",
    "UncertaintySet",
    "VolatilityMatrix",
    "solve_backward",
]

__version__ = "0.1.0"
