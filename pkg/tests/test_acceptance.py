"""Acceptance criteria, one verdict line each.

Every test prints ``PASS`` or ``FAIL`` with the measured quantity and the
tolerance it was held to; the lines are repeated in the terminal summary.
"""
import json
import math
from dataclasses import replace

import numpy as np
import pytest

from acceptance_log import verdict
from oracles import (exact_cs, exact_r2, naive_coag, naive_fragmentation, naive_multi, naive_scattering,
                     rk4_scalar)
from smolux.cli import main
from smolux.dynamics import model_from_dict
from smolux.feynman_kac import (McConfig, PathEnsemble, analytic_semigroup_linear, apply_semigroup,
                                semigroup_with_stderr)
from smolux.kernel_field import KernelField, SpatialGrid, norm
from smolux.mass_measure import BaseMeasure, MassGrid, make_power_law_base
from smolux.reaction import (CoagKernel, Fragmentation, MultiCoagKernel, ReactionModel, Scattering,
                             coag_apply, coag_tv_lipschitz_check, fragmentation_apply, multi_coag_apply,
                             scattering_apply)
from smolux.scenario import load_config, load_scenario, run_certifications, shipped_scenarios
from smolux.solver import (bound_curve_eval, reference_homogeneous_solve, solve, solve_positive,
                           validate_bound)
from smolux.validation import flow_oracle, homogeneous_run, order_fit


def random_base(rng, n):
    return BaseMeasure(MassGrid(n), rng.uniform(0.2, 2.0, n))


def random_kernel(rng, n, cutoff=None):
    a = rng.random((n, n))
    return CoagKernel(a + a.T, cutoff)


def random_fragmentation(rng, base):
    n = base.n_mass
    D = np.tril(rng.random((n, n)), -1)
    for y in range(1, n):
        D[y] *= base.masses[y] / ((D[y] * base.weights) @ base.masses)
    rate = rng.random(n)
    rate[0] = 0.0
    return Fragmentation(base, rate, D)


def moment(measure):
    return float(np.dot(np.arange(1, measure.shape[-1] + 1), measure))


def closeness(out, ref):
    out, ref = np.asarray(out), np.asarray(ref)
    return float(np.max(np.abs(out[:len(ref)] - ref))) / max(1.0, float(np.max(np.abs(ref))))


def check(number, title, ok, detail):
    line = verdict(number, title, ok, detail)
    assert ok, line


# -- transport semigroup -------------------------------------------------------------

def test_criterion_01_semigroup_decay():
    grid = SpatialGrid(2, 4.0, 32)
    base = make_power_law_base(4, 2.0)
    times = [0.25, 0.5, 1.0]
    const = model_from_dict({"sigma": {"family": "constant", "scale": 0.3},
                             "drift": {"family": "radial", "eps": 0.5, "center": [2.0, 2.0]},
                             "eps_floor": 0.5}, 2)
    f = KernelField(grid, base, np.full((1024, 4), 2.0))
    ens = PathEnsemble.simulate(const, grid, base, times, McConfig(16, 0.01, 1))
    rel = max(abs(norm(ens.transport(f, k)) / norm(f) / math.exp(-0.5 * t) - 1) for k, t in enumerate(times))

    shear = model_from_dict({"sigma": {"family": "constant", "scale": 0.3},
                             "drift": {"family": "linear", "A": [[2.0, 0.0], [0.0, -1.0]], "c": [-4.0, 2.0]},
                             "eps_floor": 1.0}, 2)
    g = KernelField.from_function(grid, base, lambda x, y: (1 + np.sin(x[:, :1]) * np.cos(x[:, 1:])) / y)
    ens = PathEnsemble.simulate(shear, grid, base, times, McConfig(16, 0.01, 2))
    weights_ok = all(ens.weight_bound_holds(k, 1.0) for k in range(len(times)))
    norms_ok = all(norm(ens.transport(g, k)) <= math.exp(-t) * norm(g) for k, t in enumerate(times))
    ok = rel <= 1e-9 and weights_ok and norms_ok
    check(1, "semigroup decay", ok,
          f"constant-field max rel dev {rel:.2e} (tol 1e-9); pathwise weight bound {weights_ok}, "
          f"norm bound {norms_ok} for div b = 1")


def test_criterion_02_pure_convection():
    sc = load_scenario("convection")
    dts = [4e-3, 2e-3, 1e-3, 5e-4]
    oracle = flow_oracle(sc.dynamics, sc.mu0, 1.0, 5e-4 / 8)
    errs = []
    for dt in dts:
        est = apply_semigroup(sc.dynamics, sc.mu0, 1.0, McConfig(1, dt, sc.seed))
        errs.append(float(np.max(np.abs(est.flat - oracle.flat))) / oracle.norm())
    slope, r2 = order_fit(dts, errs)
    ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    ok = errs[2] <= 0.02 and r2 >= 0.99 and 0.8 <= slope <= 1.2 and all(1.6 <= r <= 2.4 for r in ratios)
    check(2, "pure convection oracle", ok,
          f"sup rel error {errs[2]:.2e} at dt=1e-3 (tol 2e-2); order {slope:.3f} R^2 {r2:.4f} (>= 0.99); "
          f"halving ratios {', '.join(f'{r:.2f}' for r in ratios)}")


def test_criterion_03_gaussian_oracle():
    grid = SpatialGrid(1, 4.0, 16)
    base = make_power_law_base(4, 2.0)
    model = model_from_dict({"sigma": {"family": "constant", "scale": 0.5},
                             "drift": {"family": "linear", "A": 0.3, "c": -0.6}, "eps_floor": 0.3}, 1)
    f = KernelField(grid, base, np.random.default_rng(3).random((16, 4)))
    exact, quad = analytic_semigroup_linear(model, f, 0.5, return_error=True)
    inside = total = 0
    for seed in range(5):
        est, se = semigroup_with_stderr(model, f, 0.5, McConfig(2000, 0.005, seed))
        hit = np.abs(est.values - exact.values) <= 3 * se.values + quad.values + 1e-12
        inside += int(hit.sum())
        total += hit.size
    frac = inside / total
    check(3, "Gaussian oracle", frac >= 0.99, f"{inside}/{total} entries within 3 SE = {frac:.4f} (>= 0.99)")


# -- reaction operators --------------------------------------------------------------

def test_criterion_04_moment_conservation():
    rng = np.random.default_rng(4)
    worst = {"coag extend": 0.0, "coag absorb_top": 0.0, "fragmentation": 0.0, "cutoff+scattering": 0.0}
    for _ in range(1000):
        n = int(rng.integers(2, 17))
        base, K = random_base(rng, n), random_kernel(rng, n)
        f = rng.normal(size=n) * 10.0 ** rng.uniform(-2, 2)
        w = base.weights
        scale = K.bound_M * float(np.abs(f * w).sum()) * moment(np.abs(f * w))
        worst["coag extend"] = max(worst["coag extend"], abs(moment(coag_apply(K, f, base, "extend"))) / scale)
        worst["coag absorb_top"] = max(worst["coag absorb_top"],
                                       abs(moment(coag_apply(K, f, base, "absorb_top") * w)) / scale)
        frag = random_fragmentation(rng, base)
        frag_scale = frag.sup_B * (1 + frag.sup_f) * moment(np.abs(f * w)) * float(w.max())
        worst["fragmentation"] = max(worst["fragmentation"],
                                     abs(moment(fragmentation_apply(frag, f) * w)) / frag_scale)
        y0 = int(rng.integers(1, n + 1))
        Kc = CoagKernel(K.table, y0)
        scat = Scattering.halves(base, y0)
        total = coag_apply(Kc, f, base, "cutoff") + scattering_apply(scat, Kc, f)
        worst["cutoff+scattering"] = max(worst["cutoff+scattering"], abs(moment(total * w)) / (2 * scale))
    ok = all(v <= 1e-10 for v in worst.values())
    check(4, "first-moment conservation", ok,
          "; ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " over 1000 inputs each (tol 1e-10)")


def test_criterion_05_brute_force_equivalence():
    rng = np.random.default_rng(5)
    worst = {"coag": 0.0, "multi": 0.0, "fragmentation": 0.0, "scattering": 0.0}
    for trial in range(40):
        for n in range(1, 7):
            base, K = random_base(rng, n), random_kernel(rng, n)
            w = base.weights
            f = rng.normal(size=n)
            for overflow in ("drop", "absorb_top", "extend"):
                worst["coag"] = max(worst["coag"],
                                    closeness(coag_apply(K, f, base, overflow), naive_coag(K.table, f, w, overflow)))
            y0 = int(rng.integers(1, n + 1))
            Kc = CoagKernel(K.table, y0)
            worst["coag"] = max(worst["coag"],
                                closeness(coag_apply(Kc, f, base, "cutoff"), naive_coag(K.table, f, w, "cutoff", y0)))
            phi = rng.uniform(0.1, 1.0, n)
            for order in (3, 4):
                kern = MultiCoagKernel(None, {order: (0.8, phi)})
                for overflow in ("extend", "drop", "absorb_top"):
                    ref = naive_multi(order, 0.8, phi, f, w, overflow)
                    worst["multi"] = max(worst["multi"], closeness(multi_coag_apply(kern, f, base, overflow), ref))
            if n >= 2:
                frag = random_fragmentation(rng, base)
                ref = naive_fragmentation(frag.rate, frag.density, f, w)
                worst["fragmentation"] = max(worst["fragmentation"], closeness(fragmentation_apply(frag, f), ref))
            scat = Scattering(base, y0, rng.random((y0, y0)))
            table = {y0 + 1 + r: list(scat.table[r]) for r in range(y0)}
            for sym in (False, True):
                ref = naive_scattering(table, K.table, f, w, y0, sym)
                worst["scattering"] = max(worst["scattering"],
                                          closeness(scattering_apply(scat, Kc, f, symmetrize=sym), ref))
    ok = all(v <= 1e-12 for v in worst.values())
    check(5, "brute-force operator equivalence", ok,
          "; ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " for n_mass <= 6 (tol 1e-12)")


def lipschitz_pairs(rng, count):
    """Dense signed, nonnegative and sparse signed densities in equal thirds."""
    base = make_power_law_base(16, 2.0)
    for i in range(count):
        K = random_kernel(rng, 16)
        kind = i % 3
        if kind == 0:
            f, g = rng.normal(size=16), rng.normal(size=16)
        elif kind == 1:
            f, g = rng.random(16), rng.random(16)
        else:
            f = np.where(rng.random(16) < 0.2, rng.normal(size=16), 0.0)
            g = np.where(rng.random(16) < 0.2, rng.normal(size=16), 0.0)
        yield K, f, g, base


@pytest.mark.xfail(strict=True, reason="with constant M the inequality is false; a single atom gives ratio 3/2")
def test_criterion_06_tv_lipschitz():
    rng = np.random.default_rng(6)
    ratios = []
    for K, f, g, base in lipschitz_pairs(rng, 1000):
        rep = coag_tv_lipschitz_check(K, f, g, base, constant=1.0)
        ratios.append(rep.lhs / rep.rhs if rep.rhs > 0 else 0.0)
    violations = sum(r > 1 + 1e-9 for r in ratios)
    check(6, "TV Lipschitz, constant M", violations == 0,
          f"{violations}/1000 violations, worst lhs/rhs {max(ratios):.4f} (expected failure, see ledger)")


def test_criterion_06b_tv_lipschitz_three_halves():
    rng = np.random.default_rng(6)
    worst, violations = 0.0, 0
    for K, f, g, base in lipschitz_pairs(rng, 1000):
        rep = coag_tv_lipschitz_check(K, f, g, base, constant=1.5)
        violations += not rep.passed
        worst = max(worst, rep.lhs / rep.rhs if rep.rhs > 0 else 0.0)
    atom = coag_tv_lipschitz_check(CoagKernel.constant(4), [2.0, 0, 0, 0], np.zeros(4),
                                   BaseMeasure(MassGrid(4), np.ones(4)), constant=1.5)
    ok = violations == 0 and atom.lhs == pytest.approx(atom.rhs, rel=1e-14)
    check("6b", "TV Lipschitz, constant 3M/2", ok,
          f"{violations}/1000 violations, worst lhs/rhs {worst:.4f}; single atom attains equality")


# -- solver --------------------------------------------------------------------------

def test_criterion_07_homogeneous_equivalence():
    sc = load_scenario("homogeneous")
    rxn = sc.reaction
    c0 = sc.mu0.flat[0]
    w = sc.base.weights
    oracle = rk4_homogeneous(lambda c: naive_coag(rxn.coag.table, c, w, "drop"), c0, 1.0, 1e-3)
    _, ref = reference_homogeneous_solve(c0, rxn, 1.0, 1e-3)
    ref_gap = float(np.max(np.abs(ref[-1] - oracle)))
    errs = [float(np.max(np.abs(homogeneous_run(rxn, c0, 1.0, h) - oracle))) for h in (2e-3, 1e-3)]
    order = math.log2(errs[0] / errs[1])
    ok = errs[1] <= 1e-3 and 0.8 <= order <= 1.2 and ref_gap <= 1e-12
    check(7, "homogeneous solver equivalence", ok,
          f"sup diff {errs[1]:.2e} at dt=1e-3 (tol 1e-3); self-convergence order {order:.3f}; "
          f"package RK4 vs loop RK4 {ref_gap:.1e}")


def rk4_homogeneous(rhs, c0, T, h):
    c = np.array(c0, dtype=float)
    for _ in range(int(round(T / h))):
        k1 = rhs(c)
        k2 = rhs(c + 0.5 * h * k1)
        k3 = rhs(c + 0.5 * h * k2)
        k4 = rhs(c + h * k3)
        c = c + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return c


@pytest.fixture(scope="module")
def radial_run():
    sc = load_scenario("radial_drift_powerlaw")
    traj, rep = solve(sc.mu0, sc.dynamics, sc.reaction, sc.solver, sc.horizon)
    return sc, traj, rep


def test_criterion_08_bound_certificate(radial_run):
    sc, traj, _ = radial_run
    curve = sc.bound_curve()
    rel_se = 0.0
    for t in (0.25, 0.5, 0.75, 1.0):
        est, se = semigroup_with_stderr(sc.dynamics, sc.mu0, t, sc.solver.mc)
        rel_se = max(rel_se, norm(se) / norm(est))
    rep = validate_bound(traj, curve, mc_margin=3 * rel_se)
    ts = np.linspace(0, 3, 31)
    z = bound_curve_eval(curve, ts)
    h = 1e-3
    zr = np.array([rk4_scalar(curve.rhs, curve.z0, t, h) for t in ts])
    gap = float(np.max(np.abs(z - zr) / zr))
    threshold_ok = sc.mu0.norm() == pytest.approx(0.5 * sc.threshold(), rel=1e-14)
    ok = bool(rep.passed) and gap <= 1e-8 and threshold_ok and (sc.grid.dim, sc.grid.n_sites, sc.base.n_mass) == (1, 32, 16)
    check(8, "bound certificate", ok,
          f"{int(np.sum(rep.passed_rows))}/{len(traj)} times pass, worst margin {rep.worst_margin:.3e} "
          f"(mc_margin {3 * rel_se:.3e}, allowance {rep.allowance:.3e}); closed form vs RK4 {gap:.1e} (tol 1e-8)")


def test_criterion_09_picard_contraction():
    sc = load_scenario("radial_drift_powerlaw")
    peaks, later_ok = [], True
    for window in (1.0, 0.5, 0.25):
        _, rep = solve(sc.mu0, sc.dynamics, sc.reaction, replace(sc.solver, window=window), sc.horizon)
        rhos = [r[3] for r in rep.rows if r[1] > 1]
        later_ok = later_ok and bool(rhos) and all(r < 1 for r in rhos)
        peaks.append(rep.max_rho)
    ok = later_ok and peaks[0] > peaks[1] > peaks[2]
    check(9, "Picard contraction", ok,
          f"rho < 1 after first sweep: {later_ok}; max rho at windows 1, 0.5, 0.25: "
          + ", ".join(f"{p:.4f}" for p in peaks))


def test_criterion_10_positivity():
    worst = math.inf
    for seed in range(20):
        sc = load_scenario("positivity", seed=seed)
        assert sc.mu0.values.min() >= 0 and sc.mu0.norm() < sc.threshold()
        traj, _ = solve_positive(sc.mu0, sc.dynamics, sc.reaction, sc.solver, sc.horizon)
        worst = min(worst, float(traj.values.min()))
    sc = load_scenario("positivity")
    still = ReactionModel(sc.base, coag=CoagKernel.constant(sc.base.n_mass, 0.0), overflow="drop")
    a, _ = solve(sc.mu0, sc.dynamics, still, sc.solver, sc.horizon)
    b, _ = solve_positive(sc.mu0, sc.dynamics, still, sc.solver, sc.horizon)
    exact = a.values.tobytes() == b.values.tobytes()
    check(10, "positivity", worst >= -1e-10 and exact,
          f"min entry {worst:.3e} over 20 seeds (>= -1e-10); K = 0 bit-exact with plain solve: {exact}")


def test_criterion_11_multi_bound():
    sc = load_scenario("multi_coag")
    traj, _ = solve(sc.mu0, sc.dynamics, sc.reaction, sc.solver, sc.horizon)
    curve = sc.bound_curve()
    z = np.array([rk4_scalar(curve.rhs, curve.z0, t, 1e-4) for t in traj.times])
    allowance = traj.dt * curve.coefficient * curve.z0 ** 2
    margin = z + allowance - traj.norms
    setup_ok = sc.reaction.bound_M == 1.0 and sc.reaction.multi.n_max == 3 and curve.mode == "multi"
    ok = setup_ok and bool(np.all(margin >= 0)) and validate_bound(traj, curve).passed
    check(11, "multiple-coagulation bound", ok,
          f"worst margin {margin.min():.3e} over {len(traj)} times (allowance {allowance:.2e}); "
          f"peak norm/z {float(np.max(traj.norms / z)):.4f}")


# -- frontend ------------------------------------------------------------------------

def fragmentation_oracle(frag):
    n = frag.base.n_mass
    top_rate = max(float(frag.rate[y]) for y in range(n))
    top_density = max(float(frag.density[y][z]) for y in range(n) for z in range(n))
    return top_rate * (1.0 + top_density)


def test_criterion_12_certification_exactness(tmp_path):
    mismatches = []
    for name in shipped_scenarios():
        sc = load_scenario(name)
        rows = {r.name: r.value for r in run_certifications(sc)}
        expect = {"base_measure": exact_r2(sc.base.weights)}
        if sc.reaction.scat is not None:
            scat = sc.reaction.scat
            expect["scattering"] = exact_cs({scat.y0 + 1 + r: list(scat.table[r]) for r in range(scat.y0)},
                                            sc.base.weights, scat.y0)
        if sc.reaction.frag is not None:
            expect["fragmentation"] = fragmentation_oracle(sc.reaction.frag)
        mismatches += [f"{name}.{k}" for k, v in expect.items() if rows[k] != v]
    broken = []
    for name, path, value in [("radial_drift_powerlaw", ("dynamics", "eps_floor"), 1.5),
                              ("radial_drift_powerlaw", ("base", "conv_constant"), 1.0),
                              ("frag_scat", ("reaction", "fragmentation", "rate"), 0.5),
                              ("frag_scat", ("reaction", "scattering", "cert_constant"), 1.0)]:
        raw = load_config(name)
        node = raw
        for key in path[:-1]:
            node = node[key]
        node[path[-1]] = value
        cfg = tmp_path / f"{'_'.join(path)}.json"
        cfg.write_text(json.dumps(raw))
        broken.append(main(["certify", "--config", str(cfg)]))
    ok = not mismatches and broken == [1, 1, 1, 1]
    check(12, "certification exactness", ok,
          f"{len(shipped_scenarios())} shipped scenarios, mismatches {mismatches or 'none'}; "
          f"constructed violations exit {broken}")


def test_criterion_13_reproducibility(tmp_path, monkeypatch):
    outs = {}
    for threads in ("1", "8"):
        monkeypatch.setenv("SMOLUX_THREADS", threads)
        out = tmp_path / threads
        assert main(["simulate", "--config", "radial_drift_powerlaw", "--seed", "17", "--out", str(out)]) == 0
        outs[threads] = {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}
    names = sorted(outs["1"])
    same = names == sorted(outs["8"]) and all(outs["1"][n] == outs["8"][n] for n in names)
    check(13, "reproducibility", same and len(names) == 3,
          f"{', '.join(names)} byte-identical at 1 and 8 threads: {same}")
