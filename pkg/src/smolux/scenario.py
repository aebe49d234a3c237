"""Scenario files: strict JSON schema, object wiring and the certification sheet."""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .dynamics import (DynamicsModel, certify_divergence_bound, certify_ellipticity, mass_subsample,
                       model_from_dict)
from .errors import ConfigurationError
from .feynman_kac import McConfig
from .kernel_field import KernelField, SpatialGrid
from .mass_measure import BaseMeasure, base_from_dict, certify_convolution_constant, convolution_power_report
from .reaction import (CoagKernel, Fragmentation, MultiCoagKernel, ReactionModel, Scattering,
                       certify_scattering)
from .solver import BoundCurve, SolverConfig, global_threshold

SCHEMA = "smolux/1"
CHECKS = ("base_measure", "divergence", "ellipticity", "scattering", "fragmentation")
_TOP_KEYS = {"schema", "name", "grid", "base", "dynamics", "reaction", "initial", "solver", "mc",
             "horizon", "output", "seed", "waive", "validate"}
_GRID_KEYS = {"dim", "extent", "n_x", "policy"}
_REACTION_KEYS = {"coag", "multi", "fragmentation", "scattering", "overflow", "symmetrize_scattering"}
_SOLVER_KEYS = {"mode", "dt_quad", "picard_tol", "max_sweeps", "positivity", "positivity_alpha",
                "window", "bound_mode"}
_MC_KEYS = {"n_paths", "dt", "antithetic", "quadrature"}
_OUTPUT_KEYS = {"snapshots"}
_VALIDATE_KEYS = {"semigroup", "continuity", "convection_oracle", "homogeneous_oracle", "lipschitz"}


def _strict(spec, allowed, where):
    if not isinstance(spec, dict):
        raise ConfigurationError(f"{where} must be a JSON object")
    unknown = set(spec) - allowed
    if unknown:
        raise ConfigurationError(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass(eq=False)
class Scenario:
    raw: dict
    name: str
    grid: SpatialGrid
    base: BaseMeasure
    dynamics: DynamicsModel
    reaction: ReactionModel
    mu0: KernelField
    solver: SolverConfig
    horizon: float
    seed: int
    positivity: bool
    bound_mode: str
    waive: tuple
    snapshots: object
    validate: dict

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)

    def threshold(self) -> float:
        C = self.base.conv_constant or 0.0
        return global_threshold(self.dynamics.eps_floor, self.reaction.bound_M, C, self.base.total_mass)

    def bound_curve(self) -> BoundCurve:
        C = self.base.conv_constant or 0.0
        return BoundCurve(self.dynamics.eps_floor, self.reaction.bound_M, C, self.base.total_mass,
                          self.mu0.norm(), self.bound_mode)


def config_hash(raw: dict) -> str:
    """Git-style blob hash of the canonical JSON form."""
    body = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


def shipped_scenarios() -> list:
    folder = resources.files("smolux") / "scenarios"
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


def load_config(path_or_name) -> dict:
    """Read a scenario file; a bare shipped scenario name is also accepted."""
    p = Path(path_or_name)
    if p.exists():
        text = p.read_text()
    else:
        name = str(path_or_name)
        name = name[:-5] if name.endswith(".json") else name
        if name not in shipped_scenarios():
            raise ConfigurationError(f"config {path_or_name!r} not found")
        text = (resources.files("smolux") / "scenarios" / f"{name}.json").read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"malformed JSON in {path_or_name}: {exc}") from None


# -- builders -------------------------------------------------------------------------

def grid_from_dict(spec: dict) -> SpatialGrid:
    _strict(spec, _GRID_KEYS, "grid")
    if "dim" not in spec or "n_x" not in spec:
        raise ConfigurationError("grid needs dim and n_x")
    return SpatialGrid(int(spec["dim"]), spec.get("extent", 1.0), spec["n_x"], spec.get("policy", "clamp"))


def _coag_from_dict(spec, n_mass):
    _strict(spec, {"family", "value", "table", "cutoff_y0"}, "reaction.coag")
    y0 = spec.get("cutoff_y0")
    if "table" in spec:
        return CoagKernel(np.asarray(spec["table"], dtype=float), y0)
    if spec.get("family", "constant") != "constant":
        raise ConfigurationError(f"unknown coagulation family {spec.get('family')!r}")
    return CoagKernel.constant(n_mass, float(spec.get("value", 1.0)), y0)


def _multi_from_dict(spec, k2):
    if not isinstance(spec, dict):
        raise ConfigurationError("reaction.multi must map orders to kernels")
    higher = {}
    for key, val in spec.items():
        if isinstance(val, dict):
            _strict(val, {"value", "phi"}, f"reaction.multi[{key}]")
            higher[int(key)] = (float(val.get("value", 1.0)), val.get("phi"))
        elif isinstance(val, (int, float)):
            higher[int(key)] = (float(val), None)
        else:
            raise ConfigurationError(f"K_{key} must be a constant or a separable product")
    return MultiCoagKernel(k2, higher)


def _frag_from_dict(spec, base):
    _strict(spec, {"family", "rate", "density"}, "reaction.fragmentation")
    if "density" in spec:
        return Fragmentation(base, np.asarray(spec["rate"], dtype=float), np.asarray(spec["density"], dtype=float))
    if spec.get("family", "uniform_binary") != "uniform_binary":
        raise ConfigurationError(f"unknown fragmentation family {spec.get('family')!r}")
    return Fragmentation.uniform_binary(base, spec.get("rate", 0.0))


def _scat_from_dict(spec, base, y0):
    _strict(spec, {"family", "table", "cert_constant"}, "reaction.scattering")
    if y0 is None:
        raise ConfigurationError("scattering needs reaction.coag.cutoff_y0")
    if "table" in spec:
        scat = Scattering(base, y0, np.asarray(spec["table"], dtype=float))
    elif spec.get("family", "halves") == "halves":
        scat = Scattering.halves(base, y0)
    elif spec["family"] == "uniform":
        scat = Scattering.uniform(base, y0)
    else:
        raise ConfigurationError(f"unknown scattering family {spec['family']!r}")
    if "cert_constant" in spec:
        scat = Scattering(base, y0, scat.table, float(spec["cert_constant"]))
    return scat


def reaction_from_dict(spec: dict, base: BaseMeasure) -> ReactionModel:
    _strict(spec, _REACTION_KEYS, "reaction")
    coag = _coag_from_dict(spec["coag"], base.n_mass) if "coag" in spec else None
    multi = None
    if "multi" in spec:
        multi = _multi_from_dict(spec["multi"], coag)
    frag = _frag_from_dict(spec["fragmentation"], base) if "fragmentation" in spec else None
    scat = None
    if "scattering" in spec:
        scat = _scat_from_dict(spec["scattering"], base, coag.cutoff_y0 if coag else None)
    overflow = spec.get("overflow", "cutoff" if scat is not None else "absorb_top")
    if multi is not None:
        return ReactionModel(base, None, multi, frag, scat, overflow, bool(spec.get("symmetrize_scattering", False)))
    return ReactionModel(base, coag, None, frag, scat, overflow, bool(spec.get("symmetrize_scattering", False)))


def initial_from_dict(spec: dict, grid, base, seed, threshold=None) -> KernelField:
    """Initial density from a named family, optionally rescaled to a fraction of the threshold."""
    allowed = {"family", "value", "amplitude", "center", "width", "mass_decay", "bin", "seed",
               "threshold_fraction"}
    _strict(spec, allowed, "initial")
    family = spec.get("family", "constant")
    nodes, masses = grid.nodes(), base.masses
    if family == "constant":
        vals = np.full((grid.n_sites, base.n_mass), float(spec.get("value", 1.0)))
    elif family == "bump":
        center = np.broadcast_to(np.asarray(spec.get("center", 0.5 * np.array(grid.extent)), dtype=float),
                                 (grid.dim,))
        width = float(spec.get("width", 0.25))
        r2 = ((nodes - center) ** 2).sum(axis=1)
        decay = float(spec.get("mass_decay", 0.0))
        vals = float(spec.get("amplitude", 1.0)) * np.exp(-r2 / (2 * width ** 2))[:, None] \
            * np.exp(-decay * (masses - masses[0]))[None, :]
    elif family == "monodisperse":
        vals = np.zeros((grid.n_sites, base.n_mass))
        vals[:, int(spec.get("bin", 1)) - 1] = float(spec.get("value", 1.0))
    elif family == "random":
        rng = np.random.default_rng([int(spec.get("seed", seed)), 7])
        vals = float(spec.get("amplitude", 1.0)) * rng.random((grid.n_sites, base.n_mass))
    else:
        raise ConfigurationError(f"unknown initial family {family!r}")
    if "threshold_fraction" in spec:
        if threshold is None or not math.isfinite(threshold):
            raise ConfigurationError("threshold_fraction needs a finite threshold (nonzero kernel)")
        peak = np.abs(vals).max()
        if peak == 0:
            raise ConfigurationError("cannot rescale a zero initial field")
        vals = vals * (float(spec["threshold_fraction"]) * threshold / peak)
    return KernelField(grid, base, vals.reshape(grid.n_x + (base.n_mass,)))


def scenario_from_dict(raw: dict, seed: int | None = None, waive=()) -> Scenario:
    raw = copy.deepcopy(raw)
    _strict(raw, _TOP_KEYS, "scenario")
    if raw.get("schema") != SCHEMA:
        raise ConfigurationError(f"schema must be {SCHEMA!r}, got {raw.get('schema')!r}")
    for key in ("grid", "base", "dynamics", "horizon"):
        if key not in raw:
            raise ConfigurationError(f"scenario needs {key!r}")
    if seed is not None:
        raw["seed"] = int(seed)
    seed = int(raw.get("seed", 0))
    grid = grid_from_dict(raw["grid"])
    base = base_from_dict(raw["base"])
    dyn = model_from_dict(raw["dynamics"], grid.dim)
    rxn = reaction_from_dict(raw.get("reaction", {}), base)

    mc_spec = raw.get("mc", {})
    _strict(mc_spec, _MC_KEYS, "mc")
    mc = McConfig(int(mc_spec.get("n_paths", 256)), float(mc_spec.get("dt", 0.01)), seed,
                  bool(mc_spec.get("antithetic", False)), mc_spec.get("quadrature", "left"))
    sv = raw.get("solver", {})
    _strict(sv, _SOLVER_KEYS, "solver")
    solver = SolverConfig(sv.get("mode", "global_picard"), float(sv.get("dt_quad", 0.01)),
                          float(sv.get("picard_tol", 1e-10)), int(sv.get("max_sweeps", 200)), mc,
                          rxn.overflow, sv.get("positivity_alpha"), sv.get("window"))
    bound_mode = sv.get("bound_mode", "multi" if rxn.multi is not None else "quadratic")

    C = base.conv_constant or 0.0
    thr = global_threshold(dyn.eps_floor, rxn.bound_M, C, base.total_mass)
    mu0 = initial_from_dict(raw.get("initial", {}), grid, base, seed, thr)

    waived = tuple(raw.get("waive", ())) + tuple(waive)
    bad = [w for w in waived if w not in CHECKS]
    if bad:
        raise ConfigurationError(f"unknown checks to waive: {bad}; known: {list(CHECKS)}")
    out = raw.get("output", {})
    _strict(out, _OUTPUT_KEYS, "output")
    validate = raw.get("validate", {})
    _strict(validate, _VALIDATE_KEYS, "validate")
    horizon = float(raw["horizon"])
    if not horizon >= 0 or not math.isfinite(horizon):
        raise ConfigurationError("horizon must be finite and non-negative")
    return Scenario(raw, raw.get("name", "scenario"), grid, base, dyn, rxn, mu0, solver, horizon, seed,
                    bool(sv.get("positivity", False)), bound_mode, tuple(dict.fromkeys(waived)),
                    out.get("snapshots", False), validate)


def load_scenario(path_or_name, seed=None, waive=()) -> Scenario:
    return scenario_from_dict(load_config(path_or_name), seed, waive)


# -- certification sheet -------------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    bound: float
    passed: bool
    waived: bool = False
    note: str = ""

    @property
    def status(self) -> str:
        if self.waived:
            return "WAIVED"
        return "PASS" if self.passed else "FAIL"


def certification_points(grid: SpatialGrid) -> np.ndarray:
    """Grid nodes plus cell midpoints."""
    nodes = grid.nodes()
    return np.vstack([nodes, nodes + 0.5 * np.array(grid.spacing)])


def run_certifications(sc: Scenario) -> list:
    waived = set(sc.waive)
    rows = []
    exact = certify_convolution_constant(sc.base, 2)
    claimed = sc.base.conv_constant
    rows.append(CheckResult("base_measure", exact, claimed, exact <= claimed, "base_measure" in waived,
                            "exact R_2 against the declared constant"))
    if sc.reaction.multi is not None:
        for n in range(3, min(sc.reaction.multi.n_max, 6) + 1):
            rep = convolution_power_report(sc.base, n)
            rows.append(CheckResult(f"base_measure_order_{n}", rep.ratio, rep.implied_bound, rep.passed,
                                    "base_measure" in waived, "R_n against R_2**(n-1)"))
    pts = certification_points(sc.grid)
    masses = sc.base.masses[mass_subsample(sc.base.n_mass)]
    div = certify_divergence_bound(sc.dynamics, pts, masses)
    rows.append(CheckResult("divergence", div.min_div, div.bound, div.passed, "divergence" in waived,
                            "min div b against eps"))
    ell = certify_ellipticity(sc.dynamics, pts, masses)
    rows.append(CheckResult("ellipticity", ell.min_eig, ell.alpha, ell.passed, "ellipticity" in waived,
                            f"eigenvalues in [{ell.alpha}, {ell.beta}], max {ell.max_eig:.6g}"))
    if sc.reaction.scat is not None:
        cs = certify_scattering(sc.reaction.scat, sc.base)
        claim = sc.reaction.scat.cert_constant
        rows.append(CheckResult("scattering", cs, math.inf if claim is None else claim,
                                claim is None or cs <= claim, "scattering" in waived,
                                "exact C_S against the declared constant"))
    if sc.reaction.frag is not None:
        value, ok = sc.reaction.frag.condition(sc.dynamics.eps_floor)
        rows.append(CheckResult("fragmentation", value, sc.dynamics.eps_floor, ok, "fragmentation" in waived,
                                "sup_B (1 + sup_f) < eps"))
    return rows


def certification_table(rows) -> str:
    lines = [f"{'check':<22} {'value':>24} {'bound':>24}  status"]
    for r in rows:
        lines.append(f"{r.name:<22} {r.value!r:>24} {r.bound!r:>24}  {r.status}")
    return "\n".join(lines)


def certifications_pass(rows) -> bool:
    return all(r.passed or r.waived for r in rows)
