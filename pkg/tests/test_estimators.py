"""Estimator wrappers: parameter handling, fit/transform/predict."""
import numpy as np
import pytest
from sklearn.base import clone

from smolux.dynamics import model_from_dict
from smolux.errors import ConfigurationError
from smolux.estimators import FeynmanKacSemigroup, SpatialCoagulationSolver, check_field_array
from smolux.feynman_kac import McConfig, apply_semigroup
from smolux.kernel_field import KernelField, SpatialGrid
from smolux.mass_measure import make_power_law_base
from smolux.reaction import CoagKernel, ReactionModel
from smolux.solver import SolverConfig, solve


@pytest.fixture
def setup(radial_model):
    grid = SpatialGrid(1, 2.0, 8)
    base = make_power_law_base(4, 2.0)
    return grid, base, radial_model


def test_check_field_array_shapes(setup, rng):
    grid, base, _ = setup
    arr = rng.random((8, 4))
    assert check_field_array(arr, grid, base).shape == (8, 4)
    with pytest.raises(ConfigurationError):
        check_field_array(rng.random((7, 4)), grid, base)
    with pytest.raises(ValueError):
        check_field_array(np.full((8, 4), np.nan), grid, base)


def test_semigroup_params_and_clone(setup):
    grid, base, dyn = setup
    est = FeynmanKacSemigroup(grid, base, dyn, t=0.4, n_paths=16, seed=3)
    params = est.get_params()
    assert params["t"] == 0.4 and params["n_paths"] == 16
    other = clone(est).set_params(seed=4)
    assert other.seed == 4 and est.seed == 3


def test_semigroup_transform_matches_function(setup, rng):
    grid, base, dyn = setup
    f = KernelField(grid, base, rng.random((8, 4)))
    est = FeynmanKacSemigroup(grid, base, dyn, t=0.5, n_paths=16, dt=0.01, seed=2).fit(f.flat)
    ref = apply_semigroup(dyn, f, 0.5, McConfig(16, 0.01, 2))
    assert est.transform(f).tobytes() == ref.flat.tobytes()
    assert est.fit_transform(f.flat).tobytes() == ref.flat.tobytes()


def test_semigroup_requires_fit(setup):
    grid, base, dyn = setup
    with pytest.raises(Exception):
        FeynmanKacSemigroup(grid, base, dyn).transform(np.ones((8, 4)))
    with pytest.raises(ConfigurationError):
        FeynmanKacSemigroup().fit(np.ones((8, 4)))


def test_solver_predict(setup):
    grid, base, dyn = setup
    rxn = ReactionModel(base, coag=CoagKernel.constant(4, 0.1), overflow="drop")
    mu0 = KernelField(grid, base, np.full((8, 4), 0.2))
    est = SpatialCoagulationSolver(grid, base, dyn, rxn, horizon=0.2, dt_quad=0.05, n_paths=16,
                                   mc_dt=0.025, seed=1).fit(mu0.flat)
    traj, _ = solve(mu0, dyn, rxn, SolverConfig("global_picard", 0.05, 1e-10, 200,
                                                McConfig(16, 0.025, 1), "drop"), 0.2)
    np.testing.assert_array_equal(est.predict(0.2), traj.values[-1])
    np.testing.assert_array_equal(est.predict(0.0), mu0.flat)
    assert est.predict([0.0, 0.1]).shape == (2, 8, 4)
    with pytest.raises(ConfigurationError):
        est.predict(0.5)


def test_solver_positive_mode(setup):
    grid, base, dyn = setup
    rxn = ReactionModel(base, coag=CoagKernel.constant(4, 0.5), overflow="drop")
    est = SpatialCoagulationSolver(grid, base, dyn, rxn, horizon=0.1, dt_quad=0.05, n_paths=8,
                                   mc_dt=0.025, positivity=True).fit(np.full((8, 4), 0.3))
    assert est.predict(0.1).min() >= -1e-10
