"""Particle transport: coefficient catalogue, path simulation, certification.

Particles at ``x`` with mass ``y`` follow ``dx = sigma(x,y) dB + b(x,y) dt``
with ``y`` frozen.  Coefficients come from a small closed catalogue of
parameterized families so that scenarios stay declarative and every model
can be certified against its declared constants (divergence floor ``eps``
and ellipticity window ``[alpha, beta]``).

All coefficient methods are vectorized: ``x`` has shape ``(P, dim)`` and
``y`` is a scalar or an array of shape ``(P,)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, MisuseError, PathDivergenceError

CERT_TOL = 1e-9


def _vec(v, dim, name):
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        arr = np.full(dim, float(arr))
    if arr.shape != (dim,):
        raise ConfigurationError(f"{name} must have {dim} entries")
    return arr


def _mat(v, dim, name):
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        arr = float(arr) * np.eye(dim)
    if arr.shape != (dim, dim):
        raise ConfigurationError(f"{name} must be a {dim}x{dim} matrix")
    return arr


# -- diffusion families -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ZeroSigma:
    dim: int
    family = "zero"
    mass_dependent = False
    is_zero = True
    is_constant = True

    def matrix(self):
        return np.zeros((self.dim, self.dim))

    def __call__(self, x, y):
        return np.zeros((np.shape(x)[0], self.dim, self.dim))

    def to_dict(self):
        return {"family": self.family}


@dataclass(frozen=True, eq=False)
class ConstantSigma:
    """``sigma = matrix`` (``scale`` gives ``scale * I``)."""

    dim: int
    value: np.ndarray
    family = "constant"
    mass_dependent = False
    is_constant = True

    @property
    def is_zero(self):
        return not np.any(self.value)

    def matrix(self):
        return self.value

    def __call__(self, x, y):
        return np.broadcast_to(self.value, (np.shape(x)[0], self.dim, self.dim))

    def to_dict(self):
        return {"family": self.family, "matrix": self.value.tolist()}


@dataclass(frozen=True, eq=False)
class DiagonalSigma:
    """``sigma_ii = d_i (1 + amp sin(freq x_i)) / sqrt(1 + mass_coeff y)``."""

    dim: int
    diag: np.ndarray
    amp: float = 0.0
    freq: float = 1.0
    mass_coeff: float = 0.0
    family = "diagonal"
    is_zero = False

    def __post_init__(self):
        if abs(self.amp) >= 1:
            raise ConfigurationError("diagonal sigma needs |amp| < 1 to stay elliptic")
        if self.mass_coeff < 0:
            raise ConfigurationError("mass_coeff must be non-negative")

    @property
    def mass_dependent(self):
        return self.mass_coeff != 0

    @property
    def is_constant(self):
        return self.amp == 0 and self.mass_coeff == 0

    def matrix(self):
        if not self.is_constant:
            raise MisuseError("diagonal sigma varies in space or mass")
        return np.diag(self.diag)

    def diagonal(self, x, y):
        x = np.asarray(x, dtype=float)
        scale = 1.0 / np.sqrt(1.0 + self.mass_coeff * np.asarray(y, dtype=float))
        return self.diag * (1.0 + self.amp * np.sin(self.freq * x)) * np.reshape(scale, (-1, 1))

    def __call__(self, x, y):
        d = self.diagonal(x, y)
        out = np.zeros(d.shape + (self.dim,))
        idx = np.arange(self.dim)
        out[:, idx, idx] = d
        return out

    def to_dict(self):
        return {"family": self.family, "diag": self.diag.tolist(), "amp": self.amp,
                "freq": self.freq, "mass_coeff": self.mass_coeff}


def sigma_from_dict(spec: dict, dim: int):
    spec = dict(spec)
    family = spec.pop("family", None)
    allowed = {"zero": set(), "constant": {"scale", "matrix"},
               "diagonal": {"diag", "amp", "freq", "mass_coeff"}}
    if family not in allowed:
        raise ConfigurationError(f"unknown sigma family {family!r}")
    unknown = set(spec) - allowed[family]
    if unknown:
        raise ConfigurationError(f"unknown keys for sigma family {family!r}: {sorted(unknown)}")
    if family == "zero":
        return ZeroSigma(dim)
    if family == "constant":
        if "matrix" in spec:
            return ConstantSigma(dim, _mat(spec["matrix"], dim, "sigma matrix"))
        return ConstantSigma(dim, float(spec.get("scale", 1.0)) * np.eye(dim))
    return DiagonalSigma(dim, _vec(spec.get("diag", 1.0), dim, "diag"), float(spec.get("amp", 0.0)),
                         float(spec.get("freq", 1.0)), float(spec.get("mass_coeff", 0.0)))


# -- drift families -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LinearDrift:
    """``b(x) = A x + c``; divergence ``trace A``."""

    dim: int
    A: np.ndarray
    c: np.ndarray
    family = "linear"
    mass_dependent = False
    is_linear = True

    @property
    def is_zero(self):
        return not (np.any(self.A) or np.any(self.c))

    def linear_part(self):
        return self.A, self.c

    def __call__(self, x, y):
        return np.asarray(x, dtype=float) @ self.A.T + self.c

    def divergence(self, x, y):
        return np.full(np.shape(x)[0], float(np.trace(self.A)))

    def to_dict(self):
        return {"family": self.family, "A": self.A.tolist(), "c": self.c.tolist()}


@dataclass(frozen=True, eq=False)
class RadialDrift(LinearDrift):
    """``b(x) = eps (x - center) / dim`` so that ``div b = eps`` everywhere."""

    eps: float = 0.0
    center: np.ndarray = None
    family = "radial"

    def to_dict(self):
        return {"family": self.family, "eps": self.eps, "center": self.center.tolist()}


def make_radial(dim, eps, center=0.0):
    center = _vec(center, dim, "center")
    A = (eps / dim) * np.eye(dim)
    return RadialDrift(dim, A, -A @ center, float(eps), center)


@dataclass(frozen=True, eq=False)
class ShearDrift(LinearDrift):
    """Radial part plus a divergence-free shear ``rate * (x_2 - c_2)`` along axis 1."""

    eps: float = 0.0
    rate: float = 0.0
    center: np.ndarray = None
    family = "shear"

    def to_dict(self):
        return {"family": self.family, "eps": self.eps, "rate": self.rate,
                "center": self.center.tolist()}


def make_shear(dim, eps, rate, center=0.0):
    center = _vec(center, dim, "center")
    A = (eps / dim) * np.eye(dim)
    if dim >= 2:
        A[0, 1] = rate
    return ShearDrift(dim, A, -A @ center, float(eps), float(rate), center)


@dataclass(frozen=True, eq=False)
class RadialSineDrift:
    """``b_i = eps (x_i - c_i)/dim + amp sin(freq x_i)``.

    Divergence ``eps + amp freq sum_i cos(freq x_i)`` genuinely varies in x;
    its infimum is ``eps - dim |amp freq|``.
    """

    dim: int
    eps: float
    amp: float
    freq: float
    center: np.ndarray
    mass_coeff: float = 0.0
    family = "radial_sine"
    is_linear = False
    is_zero = False

    @property
    def mass_dependent(self):
        return self.mass_coeff != 0

    def _amp(self, y):
        # mass damps the oscillating part: amp / (1 + mass_coeff y)
        return self.amp / (1.0 + self.mass_coeff * np.reshape(np.asarray(y, dtype=float), (-1, 1)))

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        return self.eps * (x - self.center) / self.dim + self._amp(y) * np.sin(self.freq * x)

    def divergence(self, x, y):
        x = np.asarray(x, dtype=float)
        osc = (self._amp(y) * self.freq * np.cos(self.freq * x)).sum(axis=1)
        return self.eps + osc

    def to_dict(self):
        return {"family": self.family, "eps": self.eps, "amp": self.amp, "freq": self.freq,
                "center": self.center.tolist(), "mass_coeff": self.mass_coeff}


def drift_from_dict(spec: dict, dim: int):
    spec = dict(spec)
    family = spec.pop("family", None)
    allowed = {"zero": set(), "linear": {"A", "c"}, "radial": {"eps", "center"},
               "shear": {"eps", "rate", "center"},
               "radial_sine": {"eps", "amp", "freq", "center", "mass_coeff"}}
    if family not in allowed:
        raise ConfigurationError(f"unknown drift family {family!r}")
    unknown = set(spec) - allowed[family]
    if unknown:
        raise ConfigurationError(f"unknown keys for drift family {family!r}: {sorted(unknown)}")
    if family == "zero":
        return LinearDrift(dim, np.zeros((dim, dim)), np.zeros(dim))
    if family == "linear":
        return LinearDrift(dim, _mat(spec.get("A", 0.0), dim, "A"), _vec(spec.get("c", 0.0), dim, "c"))
    if family == "radial":
        return make_radial(dim, float(spec.get("eps", 0.0)), spec.get("center", 0.0))
    if family == "shear":
        return make_shear(dim, float(spec.get("eps", 0.0)), float(spec.get("rate", 0.0)),
                          spec.get("center", 0.0))
    return RadialSineDrift(dim, float(spec.get("eps", 0.0)), float(spec.get("amp", 0.0)),
                           float(spec.get("freq", 1.0)), _vec(spec.get("center", 0.0), dim, "center"),
                           float(spec.get("mass_coeff", 0.0)))


# -- the model ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DynamicsModel:
    dim: int
    sigma: object
    drift: object
    eps_floor: float
    ellipticity: tuple = (0.0, math.inf)

    def __post_init__(self):
        if self.sigma.dim != self.dim or self.drift.dim != self.dim:
            raise ConfigurationError("coefficient dimensions disagree with the model dimension")
        if not self.eps_floor > 0:
            raise ConfigurationError("eps_floor must be positive")
        a, b = self.ellipticity
        if not 0 <= a <= b:
            raise ConfigurationError("ellipticity must satisfy 0 <= alpha <= beta")
        object.__setattr__(self, "ellipticity", (float(a), float(b)))

    @property
    def mass_dependent(self) -> bool:
        return bool(self.sigma.mass_dependent or self.drift.mass_dependent)

    def diffusion(self, x, y):
        return self.sigma(x, y)

    def drift_at(self, x, y):
        return self.drift(x, y)

    def div_drift(self, x, y):
        return self.drift.divergence(x, y)

    def to_dict(self) -> dict:
        return {"sigma": self.sigma.to_dict(), "drift": self.drift.to_dict(),
                "eps_floor": self.eps_floor, "ellipticity": list(self.ellipticity)}


_MODEL_KEYS = {"sigma", "drift", "eps_floor", "ellipticity"}


def model_from_dict(spec: dict, dim: int) -> DynamicsModel:
    unknown = set(spec) - _MODEL_KEYS
    if unknown:
        raise ConfigurationError(f"unknown dynamics keys: {sorted(unknown)}")
    for key in ("sigma", "drift", "eps_floor"):
        if key not in spec:
            raise ConfigurationError(f"dynamics needs {key!r}")
    return DynamicsModel(dim, sigma_from_dict(spec["sigma"], dim), drift_from_dict(spec["drift"], dim),
                         float(spec["eps_floor"]), tuple(spec.get("ellipticity", (0.0, math.inf))))


# -- path simulation ------------------------------------------------------------

@dataclass(frozen=True)
class PathSample:
    endpoint: np.ndarray
    div_integral: float
    weight: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "weight", math.exp(-self.div_integral))


def step_schedule(times, dt: float) -> tuple:
    """Step sizes reaching every time in ``times`` and their record indices.

    Steps are full ``dt`` steps on the lattice ``k*dt``; a time off the
    lattice adds one partial step to land on it exactly.  Returns
    ``(steps, record)`` where ``record[i]`` is the number of steps taken
    when ``times[i]`` is reached.
    """
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    times = [float(t) for t in times]
    if any(t < 0 for t in times) or times != sorted(times):
        raise ConfigurationError("record times must be sorted and non-negative")
    nodes = [0.0]
    record = []
    for t in times:
        n_full = int(math.floor(t / dt + 1e-9))
        k = int(math.floor(nodes[-1] / dt + 1e-9)) + 1
        while k <= n_full and k * dt > nodes[-1] + 1e-12 * dt:
            nodes.append(k * dt)
            k += 1
        if t - nodes[-1] > 1e-9 * dt:
            nodes.append(t)
        record.append(len(nodes) - 1)
    steps = np.diff(np.array(nodes))
    return steps, record


def euler_maruyama(model: DynamicsModel, x0, y, steps, normals=None, record=(),
                   quadrature: str = "left"):
    """Advance paths through ``steps``; return recorded ``(x, div_integral)`` pairs.

    ``x0`` has shape ``(P, dim)``; ``normals(i)`` returns the standard
    Gaussian increments of step ``i`` with shape ``(P, dim)`` and is only
    called when the diffusion is nonzero.  The divergence integral uses the
    left-point rule (or the trapezoid rule).
    """
    x = np.array(x0, dtype=float, copy=True)
    y = np.asarray(y, dtype=float)
    acc = np.zeros(x.shape[0])
    sig = model.sigma
    const_sig = sig.matrix() if getattr(sig, "is_constant", False) and not sig.is_zero else None
    diag_sig = isinstance(sig, DiagonalSigma) and not sig.is_constant
    want = {}
    for pos, r in enumerate(record):
        want.setdefault(r, []).append(pos)
    out = [None] * len(record)
    for pos in want.get(0, []):
        out[pos] = (x.copy(), acc.copy())
    div = model.div_drift(x, y)
    for i, h in enumerate(steps):
        x_new = x + model.drift_at(x, y) * h
        if not sig.is_zero:
            z = normals(i) * math.sqrt(h)
            if const_sig is not None:
                x_new += z @ const_sig.T
            elif diag_sig:
                x_new += sig.diagonal(x, y) * z
            else:
                x_new += np.einsum("pij,pj->pi", sig(x, y), z)
        if not np.all(np.isfinite(x_new)):
            raise PathDivergenceError(f"path state became non-finite at step {i}", step=i)
        div_new = model.div_drift(x_new, y)
        if quadrature == "left":
            acc = acc + div * h
        elif quadrature == "trapezoid":
            acc = acc + 0.5 * (div + div_new) * h
        else:
            raise ConfigurationError(f"unknown quadrature {quadrature!r}")
        x, div = x_new, div_new
        for pos in want.get(i + 1, []):
            out[pos] = (x.copy(), acc.copy())
    return out


def simulate_path(model: DynamicsModel, x0, y: float, t: float, dt: float, stream,
                  quadrature: str = "left") -> PathSample:
    """One Euler-Maruyama path to horizon ``t`` drawing increments from ``stream``.

    ``stream`` is a :class:`numpy.random.Generator`; step ``i`` consumes
    ``dim`` consecutive standard normals.
    """
    if t < 0:
        raise ConfigurationError("horizon must be non-negative")
    x0 = np.asarray(x0, dtype=float).reshape(1, model.dim)
    if t == 0:
        return PathSample(x0[0].copy(), 0.0)
    steps, record = step_schedule([t], dt)
    (x, acc), = euler_maruyama(model, x0, y, steps,
                               lambda i: stream.standard_normal((1, model.dim)), record, quadrature)
    return PathSample(x[0], float(acc[0]))


def deterministic_flow(model: DynamicsModel, x0, y, t: float, dt: float):
    """Classical RK4 for ``x' = b(x)`` with ``I' = div b(x)`` on the same nodes.

    Accepts one point (returns a :class:`PathSample`) or an array of shape
    ``(P, dim)`` (returns ``(endpoints, div_integrals)``).
    """
    if not model.sigma.is_zero:
        raise MisuseError("deterministic_flow needs sigma identically zero")
    pts = np.asarray(x0, dtype=float)
    single = pts.ndim == 1
    x = pts.reshape(-1, model.dim).copy()
    acc = np.zeros(x.shape[0])
    if t > 0:
        steps, _ = step_schedule([t], dt)

        def rhs(p):
            return model.drift_at(p, y), model.div_drift(p, y)

        for h in steps:
            k1, l1 = rhs(x)
            k2, l2 = rhs(x + 0.5 * h * k1)
            k3, l3 = rhs(x + 0.5 * h * k2)
            k4, l4 = rhs(x + h * k3)
            x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            acc = acc + h / 6.0 * (l1 + 2 * l2 + 2 * l3 + l4)
    if single:
        return PathSample(x[0], float(acc[0]))
    return x, acc


# -- certification ----------------------------------------------------------------

@dataclass(frozen=True)
class DivergenceReport:
    min_div: float
    arg_min: tuple
    bound: float
    passed: bool


@dataclass(frozen=True)
class EllipticityReport:
    min_eig: float
    max_eig: float
    alpha: float
    beta: float
    passed: bool


def mass_subsample(n_mass: int) -> np.ndarray:
    """0-based mass bins visited by certification (stride ``max(1, n_mass // 8)``)."""
    idx = np.arange(0, n_mass, max(1, n_mass // 8))
    if idx[-1] != n_mass - 1:
        idx = np.append(idx, n_mass - 1)
    return idx


def _samples(sample_points, masses):
    pts = np.asarray(sample_points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if pts.size == 0:
        raise ConfigurationError("certification needs a non-empty sample set")
    masses = np.atleast_1d(np.asarray(masses, dtype=float))
    return pts, masses


def certify_divergence_bound(model: DynamicsModel, sample_points, masses=(1.0,)) -> DivergenceReport:
    """Exhaustive ``min div b`` over sample points times masses."""
    pts, masses = _samples(sample_points, masses)
    best, arg = math.inf, None
    for y in masses:
        div = model.div_drift(pts, y)
        i = int(np.argmin(div))
        if div[i] < best:
            best, arg = float(div[i]), (tuple(pts[i]), float(y))
    return DivergenceReport(best, arg, model.eps_floor, best >= model.eps_floor - CERT_TOL)


def certify_ellipticity(model: DynamicsModel, sample_points, masses=(1.0,)) -> EllipticityReport:
    """Eigenvalue window of ``a = sigma sigma^T`` over the samples."""
    pts, masses = _samples(sample_points, masses)
    lo, hi = math.inf, -math.inf
    for y in masses:
        s = model.diffusion(pts, y)
        eig = np.linalg.eigvalsh(np.einsum("pij,pkj->pik", s, s))
        lo, hi = min(lo, float(eig.min())), max(hi, float(eig.max()))
    alpha, beta = model.ellipticity
    return EllipticityReport(lo, hi, alpha, beta,
                             lo >= alpha - CERT_TOL and hi <= beta + CERT_TOL)
