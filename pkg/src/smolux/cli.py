"""Command-line frontend: ``smolux certify|simulate|validate``.

Exit codes: 0 pass, 1 certification or validation failure, 2 usage or
malformed configuration, 3 solver non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NonConvergenceError, SmoluxError
from .kernel_field import write_snapshot
from .scenario import (CHECKS, certification_table, certifications_pass, load_scenario, run_certifications,
                       shipped_scenarios)
from .solver import bound_curve_eval, solve, solve_positive, validate_bound
from .validation import SUITES, run_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NONCONVERGENCE = 0, 1, 2, 3
POSITIVITY_TOL = 1e-10


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "PASS" if v else "FAIL"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _out_dir(args, sc) -> Path:
    out = Path(args.out) if args.out else Path("smolux_out") / sc.name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    waive = [w for w in (args.waive or "").split(",") if w]
    return load_scenario(args.config, seed=args.seed, waive=waive)


def cmd_certify(args) -> int:
    sc = _load(args)
    rows = run_certifications(sc)
    print(certification_table(rows))
    thr = sc.threshold()
    print(f"initial norm {sc.mu0.norm()!r}, global threshold {thr!r}")
    return EXIT_OK if certifications_pass(rows) else EXIT_FAIL


def trajectory_rows(sc, traj):
    """Per-time rows ``(t, norm, z_bound, min_f, moment0, moment1, picard_sweeps, rho)``."""
    z = np.atleast_1d(bound_curve_eval(sc.bound_curve(), traj.times))
    cell = float(np.prod(sc.grid.spacing))
    w, y = sc.base.weights, sc.base.masses
    rows = []
    for j, t in enumerate(traj.times):
        vals = traj.values[j]
        m0 = cell * float((vals * w).sum())
        m1 = cell * float((vals * (w * y)).sum())
        rows.append([float(t), float(np.abs(vals).max()), float(z[j]), float(vals.min()), m0, m1,
                     int(traj.sweeps[j]), float(traj.rho[j])])
    return rows


def _snapshot_indices(spec, times):
    if spec is True:
        return [0, len(times) - 1]
    if not spec:
        return []
    return sorted({int(np.argmin(np.abs(times - float(t)))) for t in spec})


def cmd_simulate(args) -> int:
    sc = _load(args)
    rows = run_certifications(sc)
    if not certifications_pass(rows):
        print(certification_table(rows))
        print("preflight certification failed; solver not run", file=sys.stderr)
        return EXIT_FAIL
    out = _out_dir(args, sc)
    runner = solve_positive if sc.positivity else solve
    try:
        traj, report = runner(sc.mu0, sc.dynamics, sc.reaction, sc.solver, sc.horizon)
    except NonConvergenceError as exc:
        path = out / "convergence.csv"
        if exc.report is not None:
            path.write_text(exc.report.to_csv())
        print(f"{exc}; report written to {path}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    write_csv(out / "trajectory.csv",
              ["t", "norm", "z_bound", "min_f", "moment0", "moment1", "picard_sweeps", "rho"],
              trajectory_rows(sc, traj))
    (out / "convergence.csv").write_text(report.to_csv())
    bound = validate_bound(traj, sc.bound_curve())
    (out / "bound.csv").write_text(bound.to_csv())
    for j in _snapshot_indices(sc.snapshots, traj.times):
        write_snapshot(traj.field(j), out / f"snapshot_{j:06d}.bin")
    below = sc.mu0.norm() < sc.threshold()
    min_f = float(traj.values.min())
    manifest = {
        "name": sc.name, "seed": sc.seed, "dt": sc.solver.dt_quad, "mc_dt": sc.solver.mc.dt,
        "n_paths": sc.solver.mc.n_paths, "config_hash": sc.config_hash, "version": __version__,
        "mode": sc.solver.mode, "positivity": sc.positivity, "waived": list(sc.waive),
        "threshold": sc.threshold(), "initial_norm": sc.mu0.norm(),
        "bound_pass": bound.passed, "min_f": min_f,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    status = EXIT_OK
    if below and not bound.passed:
        print(f"bound certificate failed (worst margin {bound.worst_margin!r})", file=sys.stderr)
        status = EXIT_FAIL
    if sc.positivity and min_f < -POSITIVITY_TOL:
        print(f"positivity certificate failed: min entry {min_f!r}", file=sys.stderr)
        status = EXIT_FAIL
    print(f"wrote {out / 'trajectory.csv'} ({len(traj)} rows); bound {'PASS' if bound.passed else 'FAIL'}")
    return status


def cmd_validate(args) -> int:
    sc = _load(args)
    suites = [args.which] if args.which else (list(sc.validate) or ["semigroup"])
    out = _out_dir(args, sc)
    ok = True
    for name in suites:
        res = run_suite(sc, name)
        write_csv(out / f"validate_{name}.csv", res.columns, res.rows)
        print(f"{name}: {'PASS' if res.passed else 'FAIL'} {res.summary}".rstrip())
        ok = ok and res.passed
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smolux", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"smolux {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True,
                       help=f"scenario JSON path or shipped name ({', '.join(shipped_scenarios())})")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--waive", default="", help=f"comma-separated checks to waive: {','.join(CHECKS)}")

    common(sub.add_parser("certify", help="run the hypothesis checks"))
    common(sub.add_parser("simulate", help="solve and write trajectory CSV"))
    val = sub.add_parser("validate", help="run validation suites")
    val.add_argument("which", nargs="?", choices=SUITES, default=None)
    common(val)
    for suite in ("semigroup", "continuity"):
        p = sub.add_parser(f"validate-{suite}", help=f"alias for 'validate {suite}'")
        p.set_defaults(which=suite)
        common(p)
    return parser


COMMANDS = {"certify": cmd_certify, "simulate": cmd_simulate, "validate": cmd_validate,
            "validate-semigroup": cmd_validate, "validate-continuity": cmd_validate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (SmoluxError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
