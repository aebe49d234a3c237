"""Mild-solution solvers for the spatial coagulation equation.

The mild form on a uniform grid ``t_j = j * dt_quad`` reads

    mu_j = P_j mu_0 + dt_quad * sum_{i<j} P_{j-i} R(mu_i)

with left-rectangle quadrature in the time integral and ``P_k`` the
Monte Carlo transport estimator at lag ``k * dt_quad``.  All lags come from
one :class:`PathEnsemble`, so every sweep sees the same random numbers and
``P_k`` is exactly what a fresh simulation of duration ``k * dt_quad`` with
the same seed would give.

``global_picard`` iterates the whole map on windows of the time grid.  The
window length starts from a contraction-radius estimate and is halved when
a sweep fails to contract.  ``stepwise_mild`` advances
``mu_{j+1} = P_1(mu_j + dt_quad R(mu_j))`` and is the fast path.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, NonConvergenceError, NumericError, PositivityError
from .feynman_kac import McConfig, PathEnsemble
from .kernel_field import KernelField
from .reaction import ReactionModel

MODES = ("global_picard", "stepwise_mild")
MAX_DEPTH = 8


@dataclass(frozen=True)
class SolverConfig:
    mode: str = "global_picard"
    dt_quad: float = 0.01
    picard_tol: float = 1e-10
    max_sweeps: int = 200
    mc: McConfig = field(default_factory=McConfig)
    overflow: str = "absorb_top"
    positivity_alpha: float | None = None
    window: float | None = None  # override for the Picard window length (time units)
    max_depth: int = MAX_DEPTH

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.dt_quad > 0:
            raise ConfigurationError("dt_quad must be positive")
        if not self.picard_tol > 0:
            raise ConfigurationError("picard_tol must be positive")
        if int(self.max_sweeps) != self.max_sweeps or self.max_sweeps < 1:
            raise ConfigurationError("max_sweeps must be a positive integer")
        if self.window is not None and not self.window > 0:
            raise ConfigurationError("window must be positive")


@dataclass(eq=False)
class Trajectory:
    """Fields on a uniform time grid; ``values`` has shape ``(J+1, n_sites, n_mass)``."""

    times: np.ndarray
    values: np.ndarray
    grid: object
    base: object
    sweeps: np.ndarray | None = None
    rho: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ConfigurationError("trajectory times must be strictly increasing")
        if self.values.shape[0] != self.times.size:
            raise ConfigurationError("one field per time is required")

    @property
    def norms(self) -> np.ndarray:
        return np.abs(self.values).reshape(self.times.size, -1).max(axis=1)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    def field(self, j: int) -> KernelField:
        return KernelField(self.grid, self.base, self.values[j].reshape(self.grid.n_x + (self.base.n_mass,)))

    def __len__(self) -> int:
        return self.times.size


@dataclass
class ConvergenceReport:
    """Per-sweep Picard history; ``rows`` are ``(window, sweep, delta_norm, contraction_rho)``."""

    rows: list = field(default_factory=list)
    windows: list = field(default_factory=list)  # (start index, steps, sweeps, depth)
    mode: str = "global_picard"
    window_steps: int = 0

    @property
    def max_rho(self) -> float:
        vals = [r[3] for r in self.rows if not math.isnan(r[3])]
        return max(vals) if vals else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["window", "sweep", "delta_norm", "contraction_rho"])
        for win, sweep, delta, rho in self.rows:
            w.writerow([win, sweep, format(delta, ".17g"), format(rho, ".17g")])
        return buf.getvalue()


# -- bound curves --------------------------------------------------------------------

def global_threshold(eps: float, M: float, C: float, m: float) -> float:
    """Largest initial norm for which the quadratic bound curve stays bounded."""
    a = M * (C / 2.0 + m)
    return math.inf if a == 0 else eps / a


@dataclass(frozen=True)
class BoundCurve:
    """Comparison curve ``z(t)`` dominating the solution norm.

    ``quadratic``: ``z' = -eps z + M (C/2 + m) z^2`` in closed form.
    ``multi``: ``z' = -eps z + M (exp(C z) - 1 - C z) + z (exp(m z) - 1)`` by RK4.
    """

    eps: float
    M: float
    C: float
    m: float
    z0: float
    mode: str = "quadratic"

    def __post_init__(self):
        if self.mode not in ("quadratic", "multi"):
            raise ConfigurationError(f"unknown bound-curve mode {self.mode!r}")
        if self.z0 < 0:
            raise ConfigurationError("z0 must be non-negative")

    @property
    def coefficient(self) -> float:
        return self.M * (self.C / 2.0 + self.m)

    @property
    def horizon(self) -> float:
        """Blow-up time of the curve (``inf`` if it never escapes)."""
        a, eps, z0 = self.coefficient, self.eps, self.z0
        if self.mode != "quadratic" or z0 == 0 or a * z0 <= eps:
            return math.inf if self.mode == "quadratic" else self._multi_horizon()
        return math.log(a * z0 / (a * z0 - eps)) / eps

    def rhs(self, z):
        if self.mode == "quadratic":
            return -self.eps * z + self.coefficient * z * z
        return (-self.eps * z + self.M * (math.exp(self.C * z) - 1.0 - self.C * z)
                + z * (math.exp(self.m * z) - 1.0))

    def rk4_step(self) -> float:
        return 1e-3 * min(1.0, 1.0 / self.eps) if self.eps > 0 else 1e-3

    def _multi_horizon(self) -> float:
        # scalar autonomous ODE: the curve is monotone, so it either decays forever or escapes
        if self.z0 == 0 or self.rhs(self.z0) <= 0:
            return math.inf
        t, z, h = 0.0, float(self.z0), self.rk4_step()
        while True:
            try:
                k1 = self.rhs(z)
                k2 = self.rhs(z + 0.5 * h * k1)
                k3 = self.rhs(z + 0.5 * h * k2)
                k4 = self.rhs(z + h * k3)
                z = z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            except OverflowError:
                return t
            t += h
            if not math.isfinite(z) or z > 1e300:
                return t


def _rk4_curve(curve, ts):
    ts = np.asarray(ts, dtype=float)
    out = np.full(ts.shape, math.inf)
    h = curve.rk4_step()
    t, z = 0.0, float(curve.z0)
    f = curve.rhs
    for pos in np.argsort(ts, kind="stable"):
        target = float(ts[pos])
        while t < target - 1e-15 and math.isfinite(z):
            step = min(h, target - t)
            try:
                k1 = f(z)
                k2 = f(z + 0.5 * step * k1)
                k3 = f(z + 0.5 * step * k2)
                k4 = f(z + step * k3)
                z = z + step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            except OverflowError:
                z = math.inf
            if not math.isfinite(z) or abs(z) > 1e300:
                z = math.inf
            t += step
        out[pos] = z
    return out


def bound_curve_eval(curve: BoundCurve, t):
    """Value of the bound curve; ``inf`` at and beyond a blow-up."""
    scalar = np.ndim(t) == 0
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if curve.z0 == 0:
        out = np.zeros_like(ts)
    elif curve.mode == "quadratic":
        a, eps, z0 = curve.coefficient, curve.eps, curve.z0
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            denom = a + (eps - a * z0) / z0 * np.exp(eps * ts)
            out = np.where(denom > 0, eps / denom, math.inf)
        if eps == 0:
            out = np.where(1 - a * z0 * ts > 0, z0 / (1 - a * z0 * ts), math.inf)
    else:
        out = _rk4_curve(curve, ts)
    return float(out[0]) if scalar else out


def rk4_bound_curve(curve: BoundCurve, t, step: float | None = None) -> np.ndarray:
    """Integrate the curve's ODE by RK4 regardless of mode (consistency oracle)."""
    c = curve if step is None else _StepCurve(curve, step)
    return _rk4_curve(c, np.atleast_1d(np.asarray(t, dtype=float)))


class _StepCurve:
    def __init__(self, curve, step):
        self.curve, self.step = curve, step
        self.z0 = curve.z0

    def rhs(self, z):
        return self.curve.rhs(z)

    def rk4_step(self):
        return self.step


@dataclass
class BoundReport:
    times: np.ndarray
    norms: np.ndarray
    z_bound: np.ndarray
    margin: np.ndarray
    passed_rows: np.ndarray
    horizon: float
    allowance: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.passed_rows))

    @property
    def worst_margin(self) -> float:
        m = self.margin[np.isfinite(self.margin)]
        return float(m.min()) if m.size else math.inf

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "norm", "z_bound", "margin", "pass"])
        for row in zip(self.times, self.norms, self.z_bound, self.margin, self.passed_rows):
            w.writerow([format(row[0], ".17g"), format(row[1], ".17g"), format(row[2], ".17g"),
                        format(row[3], ".17g"), "PASS" if row[4] else "FAIL"])
        return buf.getvalue()


def validate_bound(traj: Trajectory, curve: BoundCurve, mc_margin=0.0,
                   allowance: float | None = None) -> BoundReport:
    """Check ``||mu_j|| <= z(t_j) (1 + mc_margin) + allowance`` at every time.

    ``mc_margin`` may be a scalar or one relative margin per time.  The
    default allowance is the left-rectangle quadrature error scale
    ``dt * M (C/2 + m) z0**2``.  Times at or beyond the curve's blow-up are
    outside its horizon and are not compared.
    """
    if allowance is None:
        allowance = traj.dt * curve.coefficient * curve.z0 ** 2
    z = np.asarray(bound_curve_eval(curve, traj.times), dtype=float)
    # relative slack of 1e-12 absorbs rounding when both sides agree exactly in exact arithmetic
    limit = z * (1.0 + np.asarray(mc_margin, dtype=float) + 1e-12) + allowance
    norms = traj.norms
    inside = np.isfinite(z)
    margin = np.where(inside, limit - norms, math.inf)
    passed = ~inside | (norms <= limit)
    horizon = curve.horizon
    return BoundReport(traj.times, norms, z, margin, passed, horizon, float(allowance))


# -- the mild map --------------------------------------------------------------------

def _time_grid(T: float, dt_quad: float) -> tuple:
    if T < 0:
        raise ConfigurationError("T must be non-negative")
    J = int(round(T / dt_quad)) if T > 0 else 0
    if T > 0 and J == 0:
        J = 1
    delta = T / J if J else dt_quad
    return J, delta, np.arange(J + 1) * delta if J else np.array([0.0])


def _lattice_cfg(mc: McConfig, delta: float) -> McConfig:
    # Euler steps must divide the quadrature step so every lag is on the path lattice
    n_sub = max(1, int(round(delta / mc.dt)))
    return replace(mc, dt=delta / n_sub)


def _ensemble(dyn, grid, base, delta, n_lags, mc):
    cfg = _lattice_cfg(mc, delta)
    return PathEnsemble.simulate(dyn, grid, base, [k * delta for k in range(1, n_lags + 1)], cfg)


def _sweep(ens, start, nus, rxn, delta, alpha=None):
    """One application of the mild map on a window.

    ``nus[0]`` is the window's starting field; returns ``F_1..F_W`` for the
    unknowns at window steps 1..W.  With ``alpha`` the shifted positivity
    form is used.
    """
    W = nus.shape[0] - 1
    if alpha is None:
        src = rxn.apply(nus[:W])
    else:
        lam = rxn.loss_rate(nus[:W])
        bracket_rate = alpha - lam
        bad = (bracket_rate < 0) & (nus[:W] > 0)
        if np.any(bad):
            step, site, j = (int(v[0]) for v in np.nonzero(bad))
            raise ConfigurationError(
                f"positivity shift alpha={alpha!r} is below the loss rate {lam[step, site, j]!r} "
                f"at site {site}, mass bin {j + 1}; raise positivity_alpha")
        src = rxn.gain(nus[:W]) + bracket_rate * nus[:W]
    out = np.empty((W,) + nus.shape[1:])
    for lag in range(1, W + 1):
        damp = 1.0 if alpha is None or alpha == 0 else math.exp(-alpha * lag * delta)
        out[lag - 1] = damp * ens.apply(start, lag - 1)
    for lag in range(1, W + 1):
        # source i feeds output j = i + lag
        moved = ens.apply(src[:W - lag + 1], lag - 1)
        if alpha is not None and alpha != 0:
            moved = math.exp(-alpha * lag * delta) * moved
        out[lag - 1:] += delta * moved
    return out


def _window_steps(mu0_norm, rxn, base, delta, J, cfg):
    if cfg.window is not None:
        return max(1, min(J, int(math.floor(cfg.window / delta + 1e-9))))
    C = base.conv_constant if base.conv_constant is not None else 0.0
    lip = rxn.lipschitz_estimate(mu0_norm, C)
    if lip == 0:
        return J
    return max(1, min(J, int(math.floor(1.0 / (2.0 * lip) / delta + 1e-9))))


def picard_step(current: Trajectory, mu0: KernelField, dyn, rxn: ReactionModel, cfg: SolverConfig,
                ensemble: PathEnsemble | None = None) -> Trajectory:
    """Apply the mild map once over the full time grid of ``current``."""
    J = len(current) - 1
    if J == 0:
        return Trajectory(current.times.copy(), mu0.flat[None].copy(), mu0.grid, mu0.base)
    delta = current.dt
    ens = ensemble or _ensemble(dyn, mu0.grid, mu0.base, delta, J, cfg.mc)
    nus = current.values.copy()
    nus[0] = mu0.flat
    out = _sweep(ens, mu0.flat, nus, rxn, delta)
    return Trajectory(current.times.copy(), np.concatenate([mu0.flat[None], out]), mu0.grid, mu0.base)


def _check_inputs(mu0, dyn, rxn, T):
    if dyn.dim != mu0.grid.dim:
        raise ConfigurationError(f"model dimension {dyn.dim} != grid dimension {mu0.grid.dim}")
    if rxn.base.n_mass != mu0.base.n_mass:
        raise ConfigurationError("reaction and initial field use different mass grids")
    if not math.isfinite(T) or T < 0:
        raise ConfigurationError("T must be finite and non-negative")


def _solve_windowed(mu0, dyn, rxn, cfg, T, alpha=None):
    J, delta, times = _time_grid(T, cfg.dt_quad)
    n_sites, n_mass = mu0.grid.n_sites, mu0.base.n_mass
    values = np.empty((J + 1, n_sites, n_mass))
    values[0] = mu0.flat
    sweeps = np.zeros(J + 1, dtype=int)
    rhos = np.full(J + 1, math.nan)
    report = ConvergenceReport(mode=cfg.mode)
    if J == 0:
        return Trajectory(times, values, mu0.grid, mu0.base, sweeps, rhos), report
    W0 = 1 if cfg.mode == "stepwise_mild" else _window_steps(mu0.norm(), rxn, mu0.base, delta, J, cfg)
    report.window_steps = W0
    ens = _ensemble(dyn, mu0.grid, mu0.base, delta, W0, cfg.mc)

    if cfg.mode == "stepwise_mild":
        for j in range(J):
            cur = values[j]
            if alpha is None:
                stage = cur + delta * rxn.apply(cur)
                values[j + 1] = ens.apply(stage, 0)
            else:
                nus = values[j:j + 2].copy()
                nus[1] = cur
                values[j + 1] = _sweep(ens, cur, nus, rxn, delta, alpha)[0]
            if not np.all(np.isfinite(values[j + 1])):
                raise NumericError(f"solution became non-finite at t={times[j + 1]!r}; reduce dt_quad")
            sweeps[j + 1] = 1
        return Trajectory(times, values, mu0.grid, mu0.base, sweeps, rhos), report

    j0, win = 0, 0
    while j0 < J:
        depth, W = 0, min(W0, J - j0)
        while True:
            start = values[j0]
            nus = np.broadcast_to(start, (W + 1,) + start.shape).copy()
            hist, ok, k = [], False, 0
            prev = None
            while k < cfg.max_sweeps:
                k += 1
                new = _sweep(ens, start, nus, rxn, delta, alpha)
                delta_norm = float(np.max(np.abs(new - nus[1:])))
                if not math.isfinite(delta_norm):
                    break
                rho = delta_norm / prev if prev not in (None, 0.0) else math.nan
                hist.append((win, k, delta_norm, rho))
                nus[1:] = new
                if delta_norm <= cfg.picard_tol or (rxn.is_null and alpha in (None, 0.0)):
                    ok = True
                    break
                if k >= 2 and rho >= 1.0:
                    break
                prev = delta_norm
            if ok:
                break
            if depth >= cfg.max_depth or W == 1:
                last = next((r[3] for r in reversed(hist) if not math.isnan(r[3])), math.nan)
                report.rows.extend(hist)
                raise NonConvergenceError(
                    f"Picard iteration did not converge on window starting at t={times[j0]!r} "
                    f"(last contraction estimate {last!r})", contraction=last, report=report)
            depth += 1
            W = max(1, W // 2)
        report.rows.extend(hist)
        report.windows.append((j0, W, k, depth))
        values[j0 + 1:j0 + W + 1] = nus[1:]
        last_rho = next((r[3] for r in reversed(hist) if not math.isnan(r[3])), math.nan)
        sweeps[j0 + 1:j0 + W + 1] = k
        rhos[j0 + 1:j0 + W + 1] = last_rho
        j0 += W
        win += 1
    return Trajectory(times, values, mu0.grid, mu0.base, sweeps, rhos), report


def solve(mu0: KernelField, dyn, rxn: ReactionModel, cfg: SolverConfig, T: float) -> tuple:
    """Solve the mild equation on ``[0, T]``; returns ``(Trajectory, ConvergenceReport)``."""
    _check_inputs(mu0, dyn, rxn, T)
    return _solve_windowed(mu0, dyn, rxn, cfg, T)


def default_alpha(mu0: KernelField, rxn: ReactionModel, T: float) -> float:
    """Shift large enough that ``alpha - loss_rate`` stays nonnegative along the bound curve."""
    base = mu0.base
    z0 = mu0.norm()
    zmax = z0
    C = base.conv_constant if base.conv_constant is not None else 0.0
    if rxn.bound_M > 0 and z0 > 0:
        curve = BoundCurve(1.0, rxn.bound_M, C, base.total_mass, z0)
        ts = np.linspace(0.0, T, 65)
        zs = np.asarray(bound_curve_eval(curve, ts))
        zs = zs[np.isfinite(zs)]
        if zs.size:
            zmax = max(zmax, float(zs.max()))
    return 1.1 * rxn.loss_rate_bound(zmax)


def solve_positive(mu0: KernelField, dyn, rxn: ReactionModel, cfg: SolverConfig, T: float) -> tuple:
    """Solve through the shifted map whose iterates stay nonnegative.

    ``alpha`` defaults to :func:`default_alpha`.  Each iterate is built from
    positive transport of ``gain + (alpha - loss_rate) * nu``, which is
    nonnegative as long as ``alpha`` dominates the loss rate.
    """
    _check_inputs(mu0, dyn, rxn, T)
    if np.any(mu0.values < 0):
        site, j = (int(v[0]) for v in np.nonzero(mu0.flat < 0))
        raise PositivityError(f"initial field is negative at site {site}, mass bin {j + 1}")
    alpha = cfg.positivity_alpha if cfg.positivity_alpha is not None else default_alpha(mu0, rxn, T)
    if alpha < 0:
        raise ConfigurationError("positivity_alpha must be non-negative")
    return _solve_windowed(mu0, dyn, rxn, cfg, T, alpha=float(alpha))


def fixed_point_residual(traj: Trajectory, mu0: KernelField, dyn, rxn, cfg: SolverConfig,
                         report: ConvergenceReport | None = None, alpha: float | None = None) -> float:
    """``max_j ||mu_j - F(mu)_j||`` re-evaluated with a fresh ensemble under the same seed.

    Windowed solves restart transport at each window start, so with a
    ``report`` the map of every window is applied from that window's own
    starting field.  Without one the whole grid is treated as one window.
    """
    J = len(traj) - 1
    if J == 0:
        return float(np.max(np.abs(traj.values[0] - mu0.flat)))
    windows = [(0, J)] if report is None or not report.windows else [w[:2] for w in report.windows]
    delta = traj.dt
    ens = _ensemble(dyn, mu0.grid, mu0.base, delta, max(W for _, W in windows), cfg.mc)
    worst = float(np.max(np.abs(traj.values[0] - mu0.flat)))
    for j0, W in windows:
        nus = traj.values[j0:j0 + W + 1]
        again = _sweep(ens, nus[0], nus, rxn, delta, alpha)
        worst = max(worst, float(np.max(np.abs(again - nus[1:]))))
    return worst


# -- homogeneous reference ---------------------------------------------------------------

def reference_homogeneous_solve(c0, rxn: ReactionModel, T: float, dt: float) -> tuple:
    """RK4 for ``c' = R(c)`` without transport; returns ``(times, values)``."""
    c = np.asarray(c0, dtype=float).copy()
    if c.shape[-1] != rxn.base.n_mass:
        raise ConfigurationError("initial density does not match the mass grid")
    n = max(1, int(round(T / dt))) if T > 0 else 0
    h = T / n if n else 0.0
    times = np.arange(n + 1) * h
    out = np.empty((n + 1,) + c.shape)
    out[0] = c
    f = rxn.apply
    for k in range(n):
        k1 = f(c)
        k2 = f(c + 0.5 * h * k1)
        k3 = f(c + 0.5 * h * k2)
        k4 = f(c + h * k3)
        c = c + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(c)):
            raise NumericError(f"RK4 became non-finite at t={times[k + 1]!r}; reduce dt")
        out[k + 1] = c
    return times, out
