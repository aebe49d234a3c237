"""Validation suites run by ``smolux validate``.

Each suite returns a :class:`SuiteResult` holding CSV columns, rows and a
pass flag.  Suites read their parameters from the scenario's ``validate``
block and fall back to the defaults below.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import DynamicsModel, LinearDrift, ZeroSigma, deterministic_flow
from .errors import ConfigurationError, MisuseError
from .feynman_kac import McConfig, PathEnsemble, apply_semigroup, continuity_check, decay_check
from .kernel_field import KernelField, SpatialGrid, eval_points
from .reaction import coag_tv_lipschitz_check
from .solver import SolverConfig, reference_homogeneous_solve, solve

SUITES = ("semigroup", "continuity", "convection_oracle", "homogeneous_oracle", "lipschitz")


@dataclass
class SuiteResult:
    name: str
    columns: list
    rows: list
    passed: bool
    summary: str = ""


def _params(sc, name, allowed):
    spec = dict(sc.validate.get(name, {}))
    unknown = set(spec) - allowed
    if unknown:
        raise ConfigurationError(f"unknown keys in validate.{name}: {sorted(unknown)}")
    return spec


def semigroup_suite(sc) -> SuiteResult:
    """Decay of the transported initial field against ``exp(-eps t)``, plus the path-weight bound."""
    p = _params(sc, "semigroup", {"times"})
    times = sorted(float(t) for t in p.get("times", [0.25, 0.5, 1.0]))
    cfg = sc.solver.mc
    rows, ok = [], True
    ens = PathEnsemble.simulate(sc.dynamics, sc.grid, sc.base, times, cfg)
    for k, t in enumerate(times):
        rep = decay_check(sc.dynamics, sc.mu0, t, cfg)
        weight_ok = ens.weight_bound_holds(k, sc.dynamics.eps_floor)
        ok = ok and rep.passed and weight_ok
        rows.append([t, rep.lhs, rep.rhs, rep.margin, rep.n_paths, rep.dt, rep.seed])
    return SuiteResult("semigroup", ["t", "lhs", "rhs", "margin", "n_paths", "dt", "seed"], rows, ok)


def continuity_suite(sc) -> SuiteResult:
    p = _params(sc, "continuity", {"times", "atol"})
    times = [float(t) for t in p.get("times", [0.2, 0.1, 0.05, 0.02, 0.01])]
    rep = continuity_check(sc.dynamics, sc.mu0, times, sc.solver.mc, p.get("atol"))
    rows = [[t, d, e] for t, d, e in zip(rep.times, rep.diffs, rep.envelope)]
    return SuiteResult("continuity", ["t", "diff", "envelope"], rows, rep.passed,
                       f"intercept={rep.intercept!r} slope={rep.slope!r} atol={rep.atol!r}")


def flow_oracle(model, field: KernelField, t: float, dt: float) -> KernelField:
    """Transported field from the RK4 characteristic flow (noise-free dynamics only)."""
    nodes = field.grid.nodes()
    out = np.empty_like(field.flat)
    if model.mass_dependent:
        for j, y in enumerate(field.base.masses):
            ep, div = deterministic_flow(model, nodes, y, t, dt)
            out[:, j] = np.exp(-div) * eval_points(field, ep, j)
    else:
        ep, div = deterministic_flow(model, nodes, field.base.masses[0], t, dt)
        out = np.exp(-div)[:, None] * eval_points(field, ep)
    return field.like(out)


def order_fit(dts, errors) -> tuple:
    """Least-squares slope and R^2 of ``log error`` against ``log dt``."""
    x, y = np.log(np.asarray(dts)), np.log(np.asarray(errors))
    slope, icept = np.polyfit(x, y, 1)
    resid = y - (slope * x + icept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2


def convection_suite(sc) -> SuiteResult:
    """Euler paths against the RK4 flow: relative error and first-order convergence."""
    p = _params(sc, "convection_oracle", {"t", "dts", "tol", "rk4_dts"})
    if not sc.dynamics.sigma.is_zero:
        raise MisuseError("convection_oracle needs sigma identically zero")
    t = float(p.get("t", 1.0))
    dts = sorted((float(d) for d in p.get("dts", [4e-3, 2e-3, 1e-3, 5e-4])), reverse=True)
    tol = float(p.get("tol", 0.02))
    fine = min(dts) / 8
    oracle = flow_oracle(sc.dynamics, sc.mu0, t, fine)
    scale = oracle.norm() or 1.0
    errs = []
    for dt in dts:
        cfg = McConfig(1, dt, sc.seed)
        est = apply_semigroup(sc.dynamics, sc.mu0, t, cfg)
        errs.append(float(np.max(np.abs(est.flat - oracle.flat))) / scale)
    slope, r2 = order_fit(dts, errs)
    # the RK4 path itself: endpoint error against a much finer RK4 run
    rk_dts = sorted((float(d) for d in p.get("rk4_dts", [0.2, 0.1, 0.05])), reverse=True)
    nodes = sc.grid.nodes()
    y = sc.base.masses[0]
    ref, _ = deterministic_flow(sc.dynamics, nodes, y, t, min(rk_dts) / 16)
    rk_errs = [float(np.max(np.abs(deterministic_flow(sc.dynamics, nodes, y, t, d)[0] - ref))) for d in rk_dts]
    rk_ratio = rk_errs[-2] / rk_errs[-1] if rk_errs[-1] > 0 else math.inf
    at_1e3 = errs[int(np.argmin(np.abs(np.log(np.array(dts) / 1e-3))))]
    ok = at_1e3 <= tol and r2 >= 0.99 and 0.8 <= slope <= 1.2
    rows = [[dt, e, "euler"] for dt, e in zip(dts, errs)] + [[d, e, "rk4"] for d, e in zip(rk_dts, rk_errs)]
    return SuiteResult("convection_oracle", ["dt", "error", "scheme"], rows, ok,
                       f"euler_order={slope!r} r2={r2!r} rk4_ratio={rk_ratio!r}")


def homogeneous_run(rxn, c0, T, dt) -> np.ndarray:
    """The spatial solver on two identical sites with no transport; returns site-0 density at T."""
    base = rxn.base
    grid = SpatialGrid(1, 1.0, 2)
    still = DynamicsModel(1, ZeroSigma(1), LinearDrift(1, np.zeros((1, 1)), np.zeros(1)), 1.0)
    mu0 = KernelField(grid, base, np.tile(np.asarray(c0, dtype=float), (2, 1)))
    cfg = SolverConfig(mode="stepwise_mild", dt_quad=dt, mc=McConfig(1, dt))
    traj, _ = solve(mu0, still, rxn, cfg, T)
    return traj.values[-1, 0]


def homogeneous_suite(sc) -> SuiteResult:
    p = _params(sc, "homogeneous_oracle", {"t", "dt", "tol"})
    T, dt, tol = float(p.get("t", 1.0)), float(p.get("dt", 1e-3)), float(p.get("tol", 1e-3))
    c0 = sc.mu0.flat[0]
    _, ref = reference_homogeneous_solve(c0, sc.reaction, T, dt)
    rows, errs = [], []
    for h in (2 * dt, dt):
        err = float(np.max(np.abs(homogeneous_run(sc.reaction, c0, T, h) - ref[-1])))
        errs.append(err)
        rows.append([h, err])
    order = math.log2(errs[0] / errs[1]) if errs[1] > 0 else math.inf
    ok = errs[1] <= tol and (errs[1] == 0.0 or 0.8 <= order <= 1.2)
    return SuiteResult("homogeneous_oracle", ["dt", "sup_error"], rows, ok, f"order={order!r}")


def lipschitz_suite(sc) -> SuiteResult:
    p = _params(sc, "lipschitz", {"trials", "constant"})
    kern = sc.reaction.binary_kernel
    if kern is None:
        raise ConfigurationError("lipschitz suite needs a binary coagulation kernel")
    trials, const = int(p.get("trials", 1000)), float(p.get("constant", 1.0))
    rng = np.random.default_rng([sc.seed, 11])
    rows, ok = [], True
    for i in range(trials):
        f = 10.0 ** rng.uniform(-2, 1) * rng.random(sc.base.n_mass)
        g = 10.0 ** rng.uniform(-2, 1) * rng.random(sc.base.n_mass)
        rep = coag_tv_lipschitz_check(kern, f, g, sc.base, const)
        ok = ok and rep.passed
        rows.append([i, rep.lhs, rep.rhs, "PASS" if rep.passed else "FAIL"])
    return SuiteResult("lipschitz", ["trial", "lhs", "rhs", "pass"], rows, ok)


RUNNERS = {"semigroup": semigroup_suite, "continuity": continuity_suite,
           "convection_oracle": convection_suite, "homogeneous_oracle": homogeneous_suite,
           "lipschitz": lipschitz_suite}


def run_suite(sc, name) -> SuiteResult:
    if name not in RUNNERS:
        raise ConfigurationError(f"unknown validation suite {name!r}; known: {list(SUITES)}")
    return RUNNERS[name](sc)
