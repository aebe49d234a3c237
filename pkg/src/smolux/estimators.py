"""Scikit-learn style wrappers around the transport semigroup and the solver.

A field is passed as a 2-d array of shape ``(n_sites, n_mass)``: rows are
spatial nodes in row-major order and columns are mass bins.  The grid and
base measure are constructor parameters, so ``get_params``/``set_params``
and cloning work as usual.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ConfigurationError
from .feynman_kac import McConfig, PathEnsemble
from .kernel_field import KernelField
from .solver import SolverConfig, solve, solve_positive


def check_field_array(X, grid, base) -> np.ndarray:
    """Validate a field given as an array or :class:`KernelField`; returns ``(n_sites, n_mass)``."""
    if isinstance(X, KernelField):
        if X.grid != grid or X.base.n_mass != base.n_mass:
            raise ConfigurationError("field lives on a different grid")
        return X.flat
    arr = np.asarray(X, dtype=float)
    if arr.shape == grid.n_x + (base.n_mass,):
        arr = arr.reshape(grid.n_sites, base.n_mass)
    arr = check_array(arr, dtype=float, ensure_all_finite=True)
    if arr.shape != (grid.n_sites, base.n_mass):
        raise ConfigurationError(f"field has shape {arr.shape}, expected ({grid.n_sites}, {base.n_mass})")
    return arr


class FeynmanKacSemigroup(TransformerMixin, BaseEstimator):
    """Transport a field over horizon ``t`` with a fixed Monte Carlo path ensemble.

    ``fit`` simulates the paths (the data itself is only shape-checked);
    ``transform`` applies the estimator to any field on the same grid, so
    repeated transforms share common random numbers.
    """

    def __init__(self, grid=None, base=None, dynamics=None, t=1.0, n_paths=256, dt=0.01, seed=0,
                 antithetic=False, quadrature="left"):
        self.grid = grid
        self.base = base
        self.dynamics = dynamics
        self.t = t
        self.n_paths = n_paths
        self.dt = dt
        self.seed = seed
        self.antithetic = antithetic
        self.quadrature = quadrature

    def _mc(self):
        return McConfig(self.n_paths, self.dt, self.seed, self.antithetic, self.quadrature)

    def fit(self, X, y=None):
        if self.grid is None or self.base is None or self.dynamics is None:
            raise ConfigurationError("grid, base and dynamics must be set before fit")
        arr = check_field_array(X, self.grid, self.base)
        self.n_features_in_ = arr.shape[1]
        self.ensemble_ = PathEnsemble.simulate(self.dynamics, self.grid, self.base, [float(self.t)], self._mc())
        return self

    def transform(self, X):
        check_is_fitted(self, "ensemble_")
        arr = check_field_array(X, self.grid, self.base)
        if self.t == 0:
            return arr.copy()
        return self.ensemble_.apply(arr, 0)


class SpatialCoagulationSolver(BaseEstimator):
    """Solve from an initial field; ``predict(t)`` returns the field at the nearest grid time."""

    def __init__(self, grid=None, base=None, dynamics=None, reaction=None, horizon=1.0,
                 mode="global_picard", dt_quad=0.01, picard_tol=1e-10, max_sweeps=200,
                 n_paths=256, mc_dt=0.01, seed=0, positivity=False, positivity_alpha=None):
        self.grid = grid
        self.base = base
        self.dynamics = dynamics
        self.reaction = reaction
        self.horizon = horizon
        self.mode = mode
        self.dt_quad = dt_quad
        self.picard_tol = picard_tol
        self.max_sweeps = max_sweeps
        self.n_paths = n_paths
        self.mc_dt = mc_dt
        self.seed = seed
        self.positivity = positivity
        self.positivity_alpha = positivity_alpha

    def solver_config(self) -> SolverConfig:
        return SolverConfig(self.mode, self.dt_quad, self.picard_tol, self.max_sweeps,
                            McConfig(self.n_paths, self.mc_dt, self.seed),
                            self.reaction.overflow, self.positivity_alpha)

    def fit(self, X, y=None):
        if None in (self.grid, self.base, self.dynamics, self.reaction):
            raise ConfigurationError("grid, base, dynamics and reaction must be set before fit")
        arr = check_field_array(X, self.grid, self.base)
        mu0 = KernelField(self.grid, self.base, arr)
        run = solve_positive if self.positivity else solve
        self.trajectory_, self.report_ = run(mu0, self.dynamics, self.reaction, self.solver_config(),
                                             float(self.horizon))
        self.n_features_in_ = arr.shape[1]
        return self

    def predict(self, t):
        """Field(s) at time(s) ``t``; shape ``(n_sites, n_mass)`` or a stack for array input."""
        check_is_fitted(self, "trajectory_")
        times = self.trajectory_.times
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(ts < -1e-12) or np.any(ts > times[-1] + 1e-12):
            raise ConfigurationError(f"t must lie in [0, {times[-1]}]")
        idx = np.abs(times[None, :] - ts[:, None]).argmin(axis=1)
        out = self.trajectory_.values[idx]
        return out[0] if np.ndim(t) == 0 else out
