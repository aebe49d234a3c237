"""Monte Carlo transport semigroup with Feynman-Kac weights.

For a density ``f`` the transported density at node ``x`` and bin ``y`` is

    (P_t f)(x; y) = E[ exp(-int_0^t div b(phi_s(x,y), y) ds) f(phi_t(x,y); y) ]

estimated by the mean over ``n_paths`` Euler-Maruyama paths started at the
node.  Every (site, mass key) pair draws from its own Philox stream keyed by
``(seed, site, mass key)``; path ``p`` of step ``i`` is entry ``(i, p)`` of
that stream, so results do not depend on how sites are split across worker
threads.  When no coefficient depends on mass, all bins share one path
ensemble per site (mass key 0).

Because interpolation is linear in the field values, the estimator for a
fixed path ensemble is a sparse matrix acting on the flattened field.  A
:class:`PathEnsemble` simulates once, records several horizons along the
same paths, and reuses the matrices for every field it is applied to.
"""
from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import sparse
from scipy.linalg import expm
from scipy.optimize import linprog

from .dynamics import CERT_TOL, DynamicsModel, euler_maruyama, step_schedule
from .errors import ConfigurationError, MisuseError, PathDivergenceError
from .kernel_field import KernelField, eval_points, interpolation_stencil, norm

CHUNK_SITES = 16
NORMAL_BLOCK = 64


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 256
    dt: float = 0.01
    seed: int = 0
    antithetic: bool = False
    quadrature: str = "left"

    def __post_init__(self):
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ConfigurationError("n_paths must be a positive integer")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.quadrature not in ("left", "trapezoid"):
            raise ConfigurationError(f"unknown quadrature {self.quadrature!r}")


def worker_count() -> int:
    """Worker pool size: ``SMOLUX_THREADS`` if set, else up to 8 CPUs."""
    env = os.environ.get("SMOLUX_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"SMOLUX_THREADS must be an integer, got {env!r}") from None
    return max(1, min(8, os.cpu_count() or 1))


def debug_enabled() -> bool:
    return os.environ.get("SMOLUX_DEBUG", "") not in ("", "0")


def site_stream(seed: int, site: int, mass_key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(site), int(mass_key)])))


class _NormalSource:
    """Per-step Gaussian increments for a block of sites, drawn in step blocks."""

    def __init__(self, gens, n_paths, dim, n_steps, antithetic):
        self.gens, self.n_paths, self.dim = gens, n_paths, dim
        self.n_steps, self.antithetic = n_steps, antithetic
        self.start, self.buf = 0, None

    def _draw(self, gen, n):
        if not self.antithetic:
            return gen.standard_normal((n, self.n_paths, self.dim))
        half = gen.standard_normal((n, (self.n_paths + 1) // 2, self.dim))
        return np.concatenate([half, -half], axis=1)[:, :self.n_paths]

    def __call__(self, i):
        if self.buf is None or i >= self.start + self.buf.shape[0]:
            self.start = i
            n = min(NORMAL_BLOCK, self.n_steps - i)
            self.buf = np.concatenate([self._draw(g, n) for g in self.gens], axis=1)
        return self.buf[i - self.start]


class PathEnsemble:
    """Paths from every grid node, recorded at several horizons.

    ``operators[k][m]`` is the sparse estimator matrix for horizon
    ``times[k]`` and mass key ``m``; ``max_weight[k]`` is the largest path
    weight at that horizon.
    """

    def __init__(self, model, grid, base, times, cfg, mass_keys, operators, max_weight,
                 endpoints=None, div_integrals=None):
        self.model, self.grid, self.base = model, grid, base
        self.times = np.asarray(times, dtype=float)
        self.cfg = cfg
        self.mass_keys = mass_keys
        self.operators = operators
        self.max_weight = np.asarray(max_weight)
        self.endpoints = endpoints
        self.div_integrals = div_integrals

    @classmethod
    def simulate(cls, model: DynamicsModel, grid, base, times, cfg: McConfig,
                 keep_paths: bool = False) -> "PathEnsemble":
        if model.dim != grid.dim:
            raise ConfigurationError(f"model dimension {model.dim} != grid dimension {grid.dim}")
        times = [float(t) for t in times]
        steps, record = step_schedule(times, cfg.dt)
        nodes = grid.nodes()
        n_sites, P = grid.n_sites, cfg.n_paths
        mass_keys = list(range(base.n_mass)) if model.mass_dependent else [None]
        jobs = [(m, np.arange(s, min(s + CHUNK_SITES, n_sites)))
                for m in range(len(mass_keys)) for s in range(0, n_sites, CHUNK_SITES)]
        n_corner = 2 ** grid.dim

        def run(job):
            mpos, sites = job
            mk = mass_keys[mpos]
            y = base.masses[mk] if mk is not None else base.masses[0]
            key = 0 if mk is None else mk + 1
            x0 = np.repeat(nodes[sites], P, axis=0)
            src = None
            if not model.sigma.is_zero:
                src = _NormalSource([site_stream(cfg.seed, s, key) for s in sites], P,
                                    grid.dim, len(steps), cfg.antithetic)
            try:
                rec = euler_maruyama(model, x0, y, steps, src, record, cfg.quadrature)
            except PathDivergenceError as exc:
                raise PathDivergenceError(
                    f"{exc} (sites {sites[0]}..{sites[-1]}, mass key {mk})", step=exc.step) from exc
            rows = np.repeat(sites, P * n_corner)
            out = []
            for x, acc in rec:
                weight = np.exp(-acc)
                idx, wts = interpolation_stencil(grid, x)
                vals = (wts * (weight / P)[:, None]).ravel()
                out.append((rows, idx.ravel(), vals, float(weight.max()), x, acc))
            return mpos, out

        n_workers = worker_count()
        if n_workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(n_workers) as pool:
                results = list(pool.map(run, jobs))
        else:
            results = [run(job) for job in jobs]

        operators, max_weight = [], []
        endpoints = np.empty((len(times), len(mass_keys), n_sites, P, grid.dim)) if keep_paths else None
        divs = np.empty((len(times), len(mass_keys), n_sites, P)) if keep_paths else None
        for k in range(len(times)):
            per_key = []
            mw = 0.0
            for mpos in range(len(mass_keys)):
                parts = [out[k] for (mp, out) in results if mp == mpos]
                rows = np.concatenate([p[0] for p in parts])
                cols = np.concatenate([p[1] for p in parts])
                vals = np.concatenate([p[2] for p in parts])
                mat = sparse.coo_matrix((vals, (rows, cols)), shape=(n_sites, n_sites)).tocsr()
                per_key.append(mat)
                mw = max(mw, max(p[3] for p in parts))
                if keep_paths:
                    endpoints[k, mpos] = np.concatenate([p[4] for p in parts]).reshape(n_sites, P, grid.dim)
                    divs[k, mpos] = np.concatenate([p[5] for p in parts]).reshape(n_sites, P)
            operators.append(per_key)
            max_weight.append(mw)
        return cls(model, grid, base, times, cfg, mass_keys, operators, max_weight, endpoints, divs)

    def index_of(self, t: float) -> int:
        hits = np.flatnonzero(np.abs(self.times - t) <= 1e-12 * max(1.0, abs(t)))
        if hits.size == 0:
            raise ConfigurationError(f"horizon {t} was not recorded in this ensemble")
        return int(hits[0])

    def apply(self, values, k: int) -> np.ndarray:
        """Apply the horizon-``k`` estimator to flat values of shape ``(..., n_sites, n_mass)``."""
        v = np.asarray(values, dtype=float)
        n_sites, n_mass = self.grid.n_sites, self.base.n_mass
        lead = v.shape[:-2]
        if v.shape[-2:] != (n_sites, n_mass):
            raise ConfigurationError(f"values shape {v.shape} does not match ({n_sites}, {n_mass})")
        v = v.reshape((-1, n_sites, n_mass))
        ops = self.operators[k]
        if len(ops) == 1:
            stacked = np.moveaxis(v, 1, 0).reshape(n_sites, -1)
            out = np.moveaxis((ops[0] @ stacked).reshape(n_sites, v.shape[0], n_mass), 0, 1)
        else:
            out = np.empty_like(v)
            for j, op in enumerate(ops):
                out[:, :, j] = (op @ v[:, :, j].T).T
        return np.ascontiguousarray(out).reshape(lead + (n_sites, n_mass))

    def transport(self, field: KernelField, k: int) -> KernelField:
        return field.like(self.apply(field.flat, k))

    def path_values(self, field: KernelField, k: int, site: int, mass_bin: int) -> np.ndarray:
        """Per-path terms ``weight * f(endpoint)`` behind one estimate (needs ``keep_paths``)."""
        if self.endpoints is None:
            raise MisuseError("ensemble was simulated without keep_paths")
        mpos = 0 if self.mass_keys == [None] else mass_bin
        ep = self.endpoints[k, mpos, site]
        return np.exp(-self.div_integrals[k, mpos, site]) * eval_points(field, ep, mass_bin)

    def weight_bound_holds(self, k: int, eps: float) -> bool:
        t = self.times[k]
        return bool(self.max_weight[k] <= math.exp(-(eps - CERT_TOL) * t) * (1 + 1e-12))


def _check_dims(model, field):
    if model.dim != field.grid.dim:
        raise ConfigurationError(f"model dimension {model.dim} != field dimension {field.grid.dim}")


def apply_semigroup(model: DynamicsModel, field: KernelField, t: float, cfg: McConfig) -> KernelField:
    """Monte Carlo estimate of the transported field at horizon ``t``."""
    _check_dims(model, field)
    if t < 0:
        raise ConfigurationError("t must be non-negative")
    if t == 0:
        return field.copy()
    ens = PathEnsemble.simulate(model, field.grid, field.base, [t], cfg)
    if debug_enabled():
        assert ens.weight_bound_holds(0, model.eps_floor), (
            f"path weight {ens.max_weight[0]} exceeds exp(-eps t) at t={t}")
    return ens.transport(field, 0)


def semigroup_with_stderr(model, field, t, cfg) -> tuple:
    """Estimate plus per-entry standard errors (sample std / sqrt(n_paths))."""
    _check_dims(model, field)
    ens = PathEnsemble.simulate(model, field.grid, field.base, [t], cfg, keep_paths=True)
    est = ens.transport(field, 0)
    se = np.empty_like(est.flat)
    for s in range(field.grid.n_sites):
        for j in range(field.base.n_mass):
            vals = ens.path_values(field, 0, s, j)
            se[s, j] = vals.std(ddof=1) / math.sqrt(vals.size) if vals.size > 1 else 0.0
    return est, field.like(se)


# -- analytic adapter ---------------------------------------------------------------

def linear_gaussian_law(model: DynamicsModel, t: float) -> tuple:
    """Exact law of ``X_t`` for drift ``A x + c`` and constant sigma.

    Returns ``(Phi, shift, cov)`` with ``X_t ~ N(Phi x0 + shift, cov)``.
    """
    if not getattr(model.drift, "is_linear", False):
        raise MisuseError("analytic semigroup needs a linear drift family")
    if not getattr(model.sigma, "is_constant", False):
        raise MisuseError("analytic semigroup needs a constant sigma")
    A, c = model.drift.linear_part()
    n = model.dim
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n], aug[:n, n] = A, c
    E = expm(aug * t)
    Phi, shift = E[:n, :n], E[:n, n]
    s = model.sigma.matrix()
    Q = s @ s.T
    # Van Loan: expm([[-A, Q], [0, A^T]] t) carries the covariance integral
    vl = np.zeros((2 * n, 2 * n))
    vl[:n, :n], vl[:n, n:], vl[n:, n:] = -A, Q, A.T
    V = expm(vl * t)
    cov = V[n:, n:].T @ V[:n, n:]
    return Phi, shift, 0.5 * (cov + cov.T)


def _gaussian_expectation(field, mean, cov, order):
    z, w = hermegauss(order)
    w = w / math.sqrt(2 * math.pi)
    dim = field.grid.dim
    vals, vecs = np.linalg.eigh(cov)
    L = vecs * np.sqrt(np.clip(vals, 0.0, None))
    nodes = np.array(list(itertools.product(z, repeat=dim)))
    weights = np.prod(np.array(list(itertools.product(w, repeat=dim))), axis=1)
    offsets = nodes @ L.T
    pts = (mean[:, None, :] + offsets[None, :, :]).reshape(-1, dim)
    ev = eval_points(field, pts).reshape(mean.shape[0], len(weights), -1)
    return np.einsum("q,sqm->sm", weights, ev)


def analytic_semigroup_linear(model: DynamicsModel, field: KernelField, t: float,
                              quadrature_order: int = 40, return_error: bool = False):
    """Transported field via the exact Gaussian transition law.

    The divergence is ``trace A``, so the weight is ``exp(-t trace A)``; the
    Gaussian expectation of the interpolated field uses tensorized
    Gauss-Hermite quadrature.  With ``return_error`` the difference to the
    rule of twice the order is returned as a quadrature error estimate.
    """
    _check_dims(model, field)
    Phi, shift, cov = linear_gaussian_law(model, t)
    A, _ = model.drift.linear_part()
    mean = field.grid.nodes() @ Phi.T + shift
    factor = math.exp(-t * float(np.trace(A)))
    est = factor * _gaussian_expectation(field, mean, cov, quadrature_order)
    out = field.like(est)
    if return_error:
        fine = factor * _gaussian_expectation(field, mean, cov, 2 * quadrature_order)
        return out, field.like(np.abs(fine - est))
    return out


# -- decay and continuity checks --------------------------------------------------------

@dataclass(frozen=True)
class DecayReport:
    t: float
    lhs: float
    rhs: float
    margin: float
    stderr: float
    n_paths: int
    dt: float
    seed: int
    passed: bool


def decay_check(model: DynamicsModel, field: KernelField, t: float, cfg: McConfig) -> DecayReport:
    """Compare ``||P_t f||`` with ``exp(-eps t) ||f||``.

    Passes if the estimate exceeds the bound by at most three standard
    errors of the estimator at its arg-max entry.
    """
    rhs = math.exp(-model.eps_floor * t) * norm(field)
    if norm(field) == 0.0:
        return DecayReport(t, 0.0, rhs, rhs, 0.0, cfg.n_paths, cfg.dt, cfg.seed, True)
    ens = PathEnsemble.simulate(model, field.grid, field.base, [t], cfg, keep_paths=True)
    out = ens.transport(field, 0)
    flat = np.abs(out.flat)
    site, j = np.unravel_index(int(np.argmax(flat)), flat.shape)
    lhs = float(flat[site, j])
    vals = ens.path_values(field, 0, int(site), int(j))
    se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    passed = lhs <= rhs * (1 + 1e-12) + 3 * se
    return DecayReport(t, lhs, rhs, rhs - lhs, se, cfg.n_paths, cfg.dt, cfg.seed, passed)


@dataclass(frozen=True)
class ContinuityReport:
    times: np.ndarray
    diffs: np.ndarray
    intercept: float
    slope: float
    envelope: np.ndarray
    atol: float
    passed: bool


def sqrt_envelope(times, diffs) -> tuple:
    """Smallest line ``a + b sqrt(t)`` (``a, b >= 0``) lying above every point."""
    s = np.sqrt(np.asarray(times, dtype=float))
    d = np.asarray(diffs, dtype=float)
    # minimize sum of envelope values subject to a + b s_i >= d_i
    res = linprog(c=[len(s), float(s.sum())], A_ub=np.column_stack([-np.ones_like(s), -s]),
                  b_ub=-d, bounds=[(0, None), (0, None)], method="highs")
    if not res.success:
        raise ConfigurationError(f"envelope fit failed: {res.message}")
    a, b = res.x
    return float(a), float(b)


def continuity_check(model: DynamicsModel, field: KernelField, t_sequence, cfg: McConfig,
                     atol: float | None = None) -> ContinuityReport:
    """Measure ``||P_t f - f||`` along ``t -> 0`` and fit an ``a + b sqrt(t)`` envelope.

    All horizons are read off one path ensemble, so the differences are
    coupled.  Passes when the envelope's value at ``t = 0`` is at most
    ``atol`` (default ``0.05 ||f||``), i.e. the differences vanish as the
    horizon shrinks.
    """
    ts = np.asarray(t_sequence, dtype=float)
    if np.any(ts < 0):
        raise ConfigurationError("times must be non-negative")
    order = np.argsort(ts)
    positive = sorted(float(t) for t in ts if t > 0)
    diffs_sorted = {}
    if positive:
        ens = PathEnsemble.simulate(model, field.grid, field.base, positive, cfg)
        for k, t in enumerate(positive):
            diffs_sorted[t] = float(np.max(np.abs(ens.apply(field.flat, k) - field.flat)))
    diffs = np.array([diffs_sorted.get(float(t), 0.0) for t in ts])
    if atol is None:
        atol = 0.05 * norm(field)
    a, b = sqrt_envelope(ts[order], diffs[order])
    env = a + b * np.sqrt(ts)
    return ContinuityReport(ts, diffs, a, b, env, atol, a <= atol + 1e-15)
