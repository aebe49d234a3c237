"""Spatially inhomogeneous coagulation with Monte Carlo transport.

The package solves the mild form of a coagulation equation whose particles
move by a diffusion with drift.  Transport is a Monte Carlo semigroup with
path weights, the reaction term acts sitewise on mass densities, and the
coupled problem is solved by Picard iteration.
"""
__version__ = "0.1.0"

from .errors import (ConfigurationError, MisuseError, NonConvergenceError, NumericError,  # noqa: E402
                     PathDivergenceError, PositivityError, SmoluxError)
from .feynman_kac import McConfig, PathEnsemble, apply_semigroup  # noqa: E402
from .kernel_field import KernelField, SpatialGrid  # noqa: E402
from .mass_measure import BaseMeasure, MassGrid, make_power_law_base  # noqa: E402
from .reaction import CoagKernel, Fragmentation, MultiCoagKernel, ReactionModel, Scattering  # noqa: E402
from .solver import BoundCurve, SolverConfig, solve, solve_positive  # noqa: E402

__all__ = [
    "BaseMeasure", "BoundCurve", "CoagKernel", "ConfigurationError", "Fragmentation", "KernelField",
    "MassGrid", "McConfig", "MisuseError", "MultiCoagKernel", "NonConvergenceError", "NumericError",
    "PathDivergenceError", "PathEnsemble", "PositivityError", "ReactionModel", "Scattering",
    "SmoluxError", "SolverConfig", "SpatialGrid", "apply_semigroup", "make_power_law_base", "solve",
    "solve_positive",
]
