"""Mass-space reaction operators acting sitewise on densities.

Every operator is returned as a nonnegative gain density plus a per-bin
loss rate ``lam`` so that the operator value is ``gain - lam * f``.  Arrays
may carry any leading axes (sites, times); the last axis is the mass bin.
Bin position ``i`` (0-based) holds mass ``(i+1) * unit``, so a pair of
positions ``(i, j)`` lands at position ``i + j + 1``.

Overflow policies for products heavier than the grid:

``drop``        discard them (mirrors the truncated analysis)
``absorb_top``  add them to the top bin scaled by ``mass / top mass``, which
                keeps the first moment exact
``cutoff``      exclude pairs heavier than ``y0`` from coagulation; they
                belong to the scattering operator
``extend``      keep them; results then span ``2 * n_mass`` bins and are
                returned as measures because those bins have no weight
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import sparse

from .errors import ConfigurationError
from .mass_measure import BaseMeasure

OVERFLOW = ("drop", "absorb_top", "cutoff", "extend")


@lru_cache(maxsize=32)
def _pair_sum_matrix(n: int) -> sparse.csr_matrix:
    """Sparse ``(n*n, 2n)`` map from pair ``(i, j)`` to extended position ``i+j+1``."""
    i, j = np.divmod(np.arange(n * n), n)
    return sparse.csr_matrix((np.ones(n * n), (np.arange(n * n), i + j + 1)), shape=(n * n, 2 * n))


def _pair_sum(P: np.ndarray) -> np.ndarray:
    n = P.shape[-1]
    lead = P.shape[:-2]
    flat = P.reshape(-1, n * n)
    out = (_pair_sum_matrix(n).T @ flat.T).T
    return np.asarray(out).reshape(lead + (2 * n,))


def batch_convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Mass convolution along the last axis; lengths ``la`` and ``lb`` give ``la + lb``."""
    la, lb = a.shape[-1], b.shape[-1]
    out = np.zeros(np.broadcast_shapes(a.shape[:-1], b.shape[:-1]) + (la + lb,))
    for j in range(lb):
        out[..., j + 1:j + 1 + la] += a * b[..., j:j + 1]
    return out


def _fold_overflow(ext: np.ndarray, n: int, overflow: str) -> np.ndarray:
    if overflow == "extend":
        return ext
    gain = ext[..., :n].copy()
    if overflow == "absorb_top":
        heavy = ext[..., n:]
        scale = np.arange(n + 1, n + 1 + heavy.shape[-1]) / n
        gain[..., n - 1] += (heavy * scale).sum(axis=-1)
    elif overflow not in ("drop", "cutoff"):
        raise ConfigurationError(f"unknown overflow policy {overflow!r}")
    return gain


# -- binary coagulation ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CoagKernel:
    table: np.ndarray
    cutoff_y0: int | None = None
    bound_M: float = field(init=False)

    def __post_init__(self):
        K = np.array(self.table, dtype=float)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ConfigurationError("coagulation table must be square")
        if not np.all(np.isfinite(K)) or np.any(K < 0):
            raise ConfigurationError("coagulation rates must be finite and non-negative")
        if not np.array_equal(K, K.T):
            raise ConfigurationError("coagulation table must be exactly symmetric")
        if self.cutoff_y0 is not None and not 1 <= self.cutoff_y0 <= K.shape[0]:
            raise ConfigurationError("cutoff_y0 must be a bin index within the grid")
        K.setflags(write=False)
        object.__setattr__(self, "table", K)
        object.__setattr__(self, "bound_M", float(K.max()) if K.size else 0.0)

    @classmethod
    def constant(cls, n_mass: int, value: float = 1.0, cutoff_y0=None) -> "CoagKernel":
        return cls(np.full((n_mass, n_mass), float(value)), cutoff_y0)

    @property
    def n_mass(self) -> int:
        return self.table.shape[0]

    def pair_mask(self) -> np.ndarray:
        """Pairs kept by binary coagulation (all pairs unless a cutoff is set)."""
        n = self.n_mass
        if self.cutoff_y0 is None:
            return np.ones((n, n), dtype=bool)
        s = np.arange(1, n + 1)
        return (s[:, None] + s[None, :]) <= self.cutoff_y0


def _check_density(f, base):
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != base.n_mass:
        raise ConfigurationError(f"density has {f.shape[-1]} bins, base measure has {base.n_mass}")
    if not np.all(np.isfinite(f)):
        raise ConfigurationError("density must be finite")
    return f


def coag_measures(kernel: CoagKernel, f, base: BaseMeasure, overflow: str = "absorb_top") -> tuple:
    """Gain and loss of binary coagulation as measures (weights per bin)."""
    f = _check_density(f, base)
    if overflow == "cutoff" and kernel.cutoff_y0 is None:
        raise ConfigurationError("cutoff overflow needs a kernel with cutoff_y0")
    w = base.weights
    u = f * w
    K = kernel.table
    if overflow == "cutoff":
        K = np.where(kernel.pair_mask(), K, 0.0)
    pairs = 0.5 * K * u[..., :, None] * u[..., None, :]
    gain = _fold_overflow(_pair_sum(pairs), base.n_mass, overflow)
    rate = u @ K
    loss = rate * u
    if overflow == "extend":
        loss = np.concatenate([loss, np.zeros_like(loss)], axis=-1)
    return gain, loss


def coag_terms(kernel: CoagKernel, f, base: BaseMeasure, overflow: str = "absorb_top") -> tuple:
    """``(k_plus, k_minus)`` densities; nonnegative when ``f`` is."""
    if overflow == "extend":
        raise ConfigurationError("extend has no density form; use coag_measures")
    gain, loss = coag_measures(kernel, f, base, overflow)
    return gain / base.weights, loss / base.weights


def coag_loss_rate(kernel: CoagKernel, f, base: BaseMeasure, overflow: str = "absorb_top") -> np.ndarray:
    K = kernel.table
    if overflow == "cutoff":
        K = np.where(kernel.pair_mask(), K, 0.0)
    return (np.asarray(f, dtype=float) * base.weights) @ K


def coag_apply(kernel: CoagKernel, f, base: BaseMeasure, overflow: str = "absorb_top") -> np.ndarray:
    """Signed coagulation term ``k_plus - k_minus`` as a density.

    Under ``extend`` the result is the signed measure on bins 1..2*n_mass.
    """
    if overflow == "extend":
        gain, loss = coag_measures(kernel, f, base, overflow)
        return gain - loss
    kp, km = coag_terms(kernel, f, base, overflow)
    return kp - km


def tv_norm(density, weights) -> np.ndarray:
    return np.abs(np.asarray(density) * weights).sum(axis=-1)


@dataclass(frozen=True)
class LipschitzReport:
    lhs: float
    rhs: float
    constant: float
    passed: bool


def coag_tv_lipschitz_check(kernel: CoagKernel, f, g, base: BaseMeasure,
                            constant: float = 1.0) -> LipschitzReport:
    """Total-variation Lipschitz inequality for binary coagulation at one site.

    ``|K(mu) - K(mu')|_TV <= c M (|mu|_TV + |mu'|_TV) |mu - mu'|_TV`` with
    ``c = constant``.  Coagulation products are kept on the extended range
    so no mass is discarded.  ``c = 1`` is the commonly quoted form;
    ``c = 1.5`` is sharp (a single occupied bin attains it).
    """
    kf = coag_apply(kernel, f, base, "extend")
    kg = coag_apply(kernel, g, base, "extend")
    w = base.weights
    lhs = float(np.abs(kf - kg).sum())
    rhs = float(constant * kernel.bound_M * (tv_norm(f, w) + tv_norm(g, w)) * tv_norm(np.subtract(f, g), w))
    return LipschitzReport(lhs, rhs, constant, lhs <= rhs * (1 + 1e-9))


# -- multiple coagulation -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MultiCoagKernel:
    """Binary kernel plus n-ary kernels ``K_n = value * prod_i phi(y_i)`` for n >= 3.

    ``higher`` maps n to ``(value, phi)``; ``phi=None`` means a constant kernel.
    """

    k2: CoagKernel | None
    higher: dict
    bound_M: float = field(init=False)

    def __post_init__(self):
        bound = self.k2.bound_M if self.k2 is not None else 0.0
        clean = {}
        for n, spec in self.higher.items():
            n = int(n)
            if n < 3:
                raise ConfigurationError("higher-order kernels start at n = 3")
            if isinstance(spec, (int, float)):
                spec = (float(spec), None)
            value, phi = spec
            if not isinstance(value, (int, float, np.floating)):
                raise ConfigurationError(
                    f"K_{n} must be a constant or a separable product; general tables are unsupported")
            if value < 0:
                raise ConfigurationError("kernel values must be non-negative")
            if phi is not None:
                phi = np.asarray(phi, dtype=float)
                if np.any(phi < 0) or not np.all(np.isfinite(phi)):
                    raise ConfigurationError("phi must be finite and non-negative")
            clean[n] = (float(value), phi)
            peak = float(value) * (float(phi.max()) ** n if phi is not None and phi.size else 1.0)
            bound = max(bound, peak)
        object.__setattr__(self, "higher", dict(sorted(clean.items())))
        object.__setattr__(self, "bound_M", bound)

    @property
    def n_max(self) -> int:
        return max([2] + list(self.higher))


def _phi(phi, n_mass):
    return np.ones(n_mass) if phi is None else phi


def multi_coag_measures(kernels: MultiCoagKernel, f, base, overflow="absorb_top") -> tuple:
    f = _check_density(f, base)
    n_mass = base.n_mass
    if overflow == "cutoff":
        raise ConfigurationError("cutoff mode is only defined for binary coagulation")
    width = kernels.n_max * n_mass if overflow == "extend" else n_mass
    gain = np.zeros(f.shape[:-1] + (width,))
    loss = np.zeros(f.shape[:-1] + (width,))
    if kernels.k2 is not None:
        g2, l2 = coag_measures(kernels.k2, f, base, overflow)
        gain[..., :g2.shape[-1]] += g2
        loss[..., :l2.shape[-1]] += l2
    u = f * base.weights
    for n, (value, phi) in kernels.higher.items():
        pu = _phi(phi, n_mass) * u
        power = pu
        for _ in range(n - 1):
            power = batch_convolve(power, pu)
        # power has length n*n_mass, positions 0..n-2 are empty
        ext = value / math.factorial(n) * power
        if overflow == "extend":
            gain[..., :ext.shape[-1]] += ext
        else:
            folded = ext[..., :n_mass].copy()
            if overflow == "absorb_top":
                heavy = ext[..., n_mass:]
                folded[..., -1] += (heavy * (np.arange(n_mass + 1, n_mass + 1 + heavy.shape[-1]) / n_mass)).sum(-1)
            elif overflow != "drop":
                raise ConfigurationError(f"unknown overflow policy {overflow!r}")
            gain += folded
        s = pu.sum(axis=-1, keepdims=True)
        loss[..., :n_mass] += value * _phi(phi, n_mass) * s ** (n - 1) / math.factorial(n - 1) * u
    return gain, loss


def multi_coag_loss_rate(kernels: MultiCoagKernel, f, base, overflow="absorb_top") -> np.ndarray:
    f = np.asarray(f, dtype=float)
    rate = np.zeros(f.shape)
    if kernels.k2 is not None:
        rate += coag_loss_rate(kernels.k2, f, base, overflow)
    u = f * base.weights
    for n, (value, phi) in kernels.higher.items():
        ph = _phi(phi, base.n_mass)
        s = (ph * u).sum(axis=-1, keepdims=True)
        rate += value * ph * s ** (n - 1) / math.factorial(n - 1)
    return rate


def multi_coag_apply(kernels: MultiCoagKernel, f, base, overflow="absorb_top") -> np.ndarray:
    """Sum over n of ``K_n^+ - K_n^-``; densities, or measures under ``extend``."""
    gain, loss = multi_coag_measures(kernels, f, base, overflow)
    if overflow == "extend":
        return gain - loss
    return gain / base.weights - loss / base.weights


# -- fragmentation ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Fragmentation:
    """Breakage at rate ``B(y)`` into fragments ``F(y; {z}) = frag(y; z) w_z``.

    ``density[y, z]`` holds ``frag(y; z)`` by 0-based positions and must
    vanish for ``z >= y``.  Each breaking bin must conserve mass.
    """

    base: BaseMeasure
    rate: np.ndarray
    density: np.ndarray
    sup_B: float = field(init=False)
    sup_f: float = field(init=False)

    def __post_init__(self):
        n = self.base.n_mass
        B = np.broadcast_to(np.asarray(self.rate, dtype=float), (n,)).copy()
        D = np.array(self.density, dtype=float)
        if D.shape != (n, n):
            raise ConfigurationError(f"fragment density must be {n}x{n}")
        if np.any(B < 0) or np.any(D < 0) or not (np.all(np.isfinite(B)) and np.all(np.isfinite(D))):
            raise ConfigurationError("fragmentation rates and densities must be finite and non-negative")
        if np.any(np.triu(D) != 0):
            raise ConfigurationError("fragments must be strictly lighter than the parent")
        m = self.base.masses
        produced = (D * self.base.weights) @ m
        active = B > 0
        bad = active & ~np.isclose(produced, m, rtol=1e-10, atol=0.0)
        if np.any(bad):
            k = int(np.argmax(bad))
            raise ConfigurationError(
                f"fragmentation of bin {k + 1} produces mass {produced[k]!r}, expected {m[k]!r}")
        B.setflags(write=False)
        D.setflags(write=False)
        object.__setattr__(self, "rate", B)
        object.__setattr__(self, "density", D)
        object.__setattr__(self, "sup_B", float(B.max()))
        object.__setattr__(self, "sup_f", float(D.max()))

    @classmethod
    def uniform_binary(cls, base: BaseMeasure, rate) -> "Fragmentation":
        """``F(k; {j}) = 2/(k-1)`` for ``1 <= j < k``; bin 1 cannot break."""
        n = base.n_mass
        k = np.arange(1, n + 1)
        D = np.zeros((n, n))
        for y in range(1, n):
            D[y, :y] = 2.0 / (k[y] - 1) / base.weights[:y]
        B = np.broadcast_to(np.asarray(rate, dtype=float), (n,)).copy()
        B[0] = 0.0
        return cls(base, B, D)

    def condition(self, eps: float) -> tuple:
        """``(sup_B (1 + sup_f), passed)`` for the small-breakage requirement."""
        value = self.sup_B * (1.0 + self.sup_f)
        return value, value < eps


def fragmentation_gain(frag: Fragmentation, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    return (frag.rate * f * frag.base.weights) @ frag.density


def fragmentation_apply(frag: Fragmentation, f, base: BaseMeasure | None = None) -> np.ndarray:
    """``gain_z = sum_y frag(y;z) B(y) f_y w_y`` minus ``B(z) f_z``."""
    if base is not None and base.n_mass != frag.base.n_mass:
        raise ConfigurationError("fragmentation defined on a different mass grid")
    f = np.asarray(f, dtype=float)
    return fragmentation_gain(frag, f) - frag.rate * f


# -- scattering -----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Scattering:
    """Redistribution ``S(a; {z})`` of products ``a`` in ``(y0, 2 y0]`` onto ``z <= y0``.

    ``table[r, z]`` holds ``S(y0 + 1 + r; z + 1)`` (bins, 0-based rows and columns).
    """

    base: BaseMeasure
    y0: int
    table: np.ndarray
    cert_constant: float | None = None

    def __post_init__(self):
        if not 1 <= self.y0 <= self.base.n_mass:
            raise ConfigurationError("y0 must be a bin index within the grid")
        S = np.array(self.table, dtype=float)
        if S.shape != (self.y0, self.y0):
            raise ConfigurationError(f"scattering table must be {self.y0}x{self.y0}")
        if np.any(S < 0) or not np.all(np.isfinite(S)):
            raise ConfigurationError("scattering table must be finite and non-negative")
        S.setflags(write=False)
        object.__setattr__(self, "table", S)

    @classmethod
    def halves(cls, base, y0) -> "Scattering":
        """Split ``a`` into ``floor(a/2)`` and ``ceil(a/2)``."""
        S = np.zeros((y0, y0))
        for r in range(y0):
            a = y0 + 1 + r
            S[r, a // 2 - 1] += 1.0
            S[r, (a + 1) // 2 - 1] += 1.0
        return cls(base, y0, S)

    @classmethod
    def uniform(cls, base, y0) -> "Scattering":
        """Spread ``a`` evenly: ``S(a; z) = 2a / (y0 (y0 + 1))`` on every ``z <= y0``."""
        a = np.arange(y0 + 1, 2 * y0 + 1, dtype=float)
        return cls(base, y0, np.repeat((2 * a / (y0 * (y0 + 1)))[:, None], y0, axis=1))

    def mass_conserving(self, rtol: float = 1e-12) -> bool:
        z = np.arange(1, self.y0 + 1)
        a = np.arange(self.y0 + 1, 2 * self.y0 + 1)
        return bool(np.allclose(self.table @ z, a, rtol=rtol, atol=0.0))

    def crossing_mask(self) -> np.ndarray:
        s = np.arange(1, self.y0 + 1)
        return (s[:, None] + s[None, :]) > self.y0


def certify_scattering(scat: Scattering, base: BaseMeasure | None = None) -> float:
    """Exact ``max_z sum_{i,j<=y0, i+j>y0} S(i+j; z) w_i w_j / w_z``."""
    base = base or scat.base
    w = base.weights
    y0 = scat.y0
    best = 0.0
    for z in range(y0):
        terms = [float(scat.table[i + j + 2 - y0 - 1, z]) * float(w[i]) * float(w[j])
                 for i in range(y0) for j in range(y0) if i + j + 2 > y0]
        best = max(best, math.fsum(terms) / float(w[z]))
    return best


def _scatter_rates(scat, kernel, f, symmetrize):
    y0 = scat.y0
    u = np.asarray(f, dtype=float)[..., :y0] * scat.base.weights[:y0]
    K = np.where(scat.crossing_mask(), kernel.table[:y0, :y0], 0.0)
    factor = 0.5 if symmetrize else 1.0
    return factor * K * u[..., :, None] * u[..., None, :], K, u, factor


def scattering_measures(scat: Scattering, kernel: CoagKernel, f, symmetrize: bool = False) -> tuple:
    if kernel.cutoff_y0 != scat.y0:
        raise ConfigurationError("kernel cutoff_y0 must equal the scattering y0")
    f = np.asarray(f, dtype=float)
    n, y0 = scat.base.n_mass, scat.y0
    rates, _, _, _ = _scatter_rates(scat, kernel, f, symmetrize)
    by_mass = _pair_sum(rates)[..., y0:2 * y0]  # positions of masses y0+1..2y0
    gain = np.zeros(f.shape[:-1] + (n,))
    loss = np.zeros(f.shape[:-1] + (n,))
    gain[..., :y0] = by_mass @ scat.table
    loss[..., :y0] = rates.sum(axis=-1) + rates.sum(axis=-2)
    return gain, loss


def scattering_loss_rate(scat, kernel, f, symmetrize=False) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    _, K, u, factor = _scatter_rates(scat, kernel, f, symmetrize)
    rate = np.zeros(f.shape)
    rate[..., :scat.y0] = 2.0 * factor * (u @ K)
    return rate


def scattering_apply(scat: Scattering, kernel: CoagKernel, f, base: BaseMeasure | None = None,
                     symmetrize: bool = False) -> np.ndarray:
    """Scattering of pairs whose combined mass crosses ``y0``, as a density.

    Ordered pairs are integrated without the 1/2 used for coagulation;
    ``symmetrize=True`` applies it.
    """
    base = base or scat.base
    gain, loss = scattering_measures(scat, kernel, f, symmetrize)
    return (gain - loss) / base.weights


# -- the full reaction term -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReactionModel:
    """Coagulation (binary or multiple), fragmentation and scattering together."""

    base: BaseMeasure
    coag: CoagKernel | None = None
    multi: MultiCoagKernel | None = None
    frag: Fragmentation | None = None
    scat: Scattering | None = None
    overflow: str = "absorb_top"
    symmetrize_scattering: bool = False

    def __post_init__(self):
        if self.overflow not in OVERFLOW or self.overflow == "extend":
            raise ConfigurationError(f"reaction overflow must be drop, absorb_top or cutoff, got {self.overflow!r}")
        if self.coag is not None and self.multi is not None:
            raise ConfigurationError("give the binary kernel inside the multiple-coagulation kernel")
        kern = self.binary_kernel
        if kern is not None and kern.n_mass != self.base.n_mass:
            raise ConfigurationError("kernel size does not match the mass grid")
        if self.scat is not None:
            if self.coag is None or self.coag.cutoff_y0 != self.scat.y0:
                raise ConfigurationError("scattering needs a binary kernel with cutoff_y0 = y0")
            if self.overflow != "cutoff":
                raise ConfigurationError("scattering requires overflow = 'cutoff'")
        if self.overflow == "cutoff" and (self.coag is None or self.coag.cutoff_y0 is None):
            raise ConfigurationError("cutoff overflow needs a binary kernel with cutoff_y0")

    @property
    def binary_kernel(self):
        if self.coag is not None:
            return self.coag
        return self.multi.k2 if self.multi is not None else None

    @property
    def bound_M(self) -> float:
        if self.multi is not None:
            return self.multi.bound_M
        return self.coag.bound_M if self.coag is not None else 0.0

    @property
    def is_null(self) -> bool:
        # scattering rates carry the coagulation kernel, so a zero kernel silences them too
        frag_zero = self.frag is None or self.frag.sup_B == 0.0
        return self.bound_M == 0.0 and frag_zero

    def gain(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        w = self.base.weights
        out = np.zeros(f.shape)
        if self.coag is not None:
            out += coag_measures(self.coag, f, self.base, self.overflow)[0] / w
        if self.multi is not None:
            out += multi_coag_measures(self.multi, f, self.base, self.overflow)[0] / w
        if self.frag is not None:
            out += fragmentation_gain(self.frag, f)
        if self.scat is not None:
            out += scattering_measures(self.scat, self.coag, f, self.symmetrize_scattering)[0] / w
        return out

    def loss_rate(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        out = np.zeros(f.shape)
        if self.coag is not None:
            out += coag_loss_rate(self.coag, f, self.base, self.overflow)
        if self.multi is not None:
            out += multi_coag_loss_rate(self.multi, f, self.base, self.overflow)
        if self.frag is not None:
            out += self.frag.rate
        if self.scat is not None:
            out += scattering_loss_rate(self.scat, self.coag, f, self.symmetrize_scattering)
        return out

    def apply(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        return self.gain(f) - self.loss_rate(f) * f

    def __call__(self, f) -> np.ndarray:
        return self.apply(f)

    def loss_rate_bound(self, z: float) -> float:
        """Upper bound on ``loss_rate`` over densities with max entry ``z``."""
        m = self.base.total_mass
        M = self.bound_M
        bound = 0.0
        if self.binary_kernel is not None:
            bound += M * m * z
        if self.multi is not None:
            for n in self.multi.higher:
                bound += M * (m * z) ** (n - 1) / math.factorial(n - 1)
        if self.frag is not None:
            bound += self.frag.sup_B
        if self.scat is not None:
            bound += (1.0 if self.symmetrize_scattering else 2.0) * M * m * z
        return bound

    def lipschitz_estimate(self, z: float, C: float) -> float:
        """Heuristic local Lipschitz constant of the reaction term near norm ``z``."""
        m = self.base.total_mass
        lip = 2.0 * self.bound_M * (C / 2.0 + m) * (z + 1.0)
        if self.multi is not None:
            for n in self.multi.higher:
                lip += n * self.bound_M * (C ** n / math.factorial(n) + m ** (n - 1) / math.factorial(n - 1)) * (z + 1.0) ** (n - 1)
        if self.frag is not None:
            lip += self.frag.sup_B * (1.0 + self.frag.sup_f)
        if self.scat is not None:
            cs = certify_scattering(self.scat)
            lip += 2.0 * self.bound_M * (cs + 2.0 * m) * (z + 1.0)
        return lip
