"""Discrete mass grid and the reference mass measure.

Masses live on a uniform integer-indexed grid: bin ``k`` (1-based) carries
mass ``k * unit``, so the sum of two grid masses is again a grid mass.  The
reference measure puts weight ``w_k`` on bin ``k``; densities of kernels are
taken with respect to it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, PositivityError

MIN_WEIGHT = 1e-300
MAX_CERT_ORDER = 6


@dataclass(frozen=True)
class MassGrid:
    n_mass: int
    unit: float = 1.0

    def __post_init__(self):
        if int(self.n_mass) != self.n_mass or self.n_mass < 1:
            raise ConfigurationError(f"n_mass must be a positive integer, got {self.n_mass!r}")
        if not (self.unit > 0 and math.isfinite(self.unit)):
            raise ConfigurationError(f"unit must be a positive finite real, got {self.unit!r}")
        object.__setattr__(self, "n_mass", int(self.n_mass))
        object.__setattr__(self, "unit", float(self.unit))

    @property
    def masses(self) -> np.ndarray:
        return self.unit * np.arange(1, self.n_mass + 1, dtype=float)

    @property
    def indices(self) -> np.ndarray:
        """Integer bin labels 1..n_mass."""
        return np.arange(1, self.n_mass + 1)


@dataclass(frozen=True, eq=False)
class BaseMeasure:
    """Reference measure ``nu0`` on the mass grid.

    ``conv_constant`` is the certified constant C with
    ``(w * w)_k <= C w_k`` for every in-range bin, or None if not certified.
    """

    grid: MassGrid
    weights: np.ndarray
    conv_constant: float | None = None
    total_mass: float = field(init=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.shape != (self.grid.n_mass,):
            raise ConfigurationError(
                f"expected {self.grid.n_mass} weights, got {w.shape[0]}")
        if not np.all(np.isfinite(w)):
            raise ConfigurationError("weights must be finite")
        if np.any(w < MIN_WEIGHT):
            bad = int(np.argmax(w < MIN_WEIGHT)) + 1
            raise PositivityError(
                f"weight of bin {bad} is {w[bad - 1]!r}; every weight must exceed {MIN_WEIGHT}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "total_mass", math.fsum(w))

    @property
    def n_mass(self) -> int:
        return self.grid.n_mass

    @property
    def masses(self) -> np.ndarray:
        return self.grid.masses

    def certified(self) -> "BaseMeasure":
        """Return a copy carrying the exact truncated constant R_2."""
        return BaseMeasure(self.grid, self.weights, certify_convolution_constant(self, 2))

    def to_dict(self) -> dict:
        return {"n_mass": self.grid.n_mass, "unit": self.grid.unit,
                "weights": [float(v) for v in self.weights]}


def _weights_of(a) -> np.ndarray:
    if isinstance(a, BaseMeasure):
        return np.asarray(a.weights)
    return np.asarray(a, dtype=float)


def convolve(a, b, range_policy: str = "truncate") -> np.ndarray:
    """Convolution of two weight vectors on the same mass grid.

    Entry ``k-1`` of the result is the weight at mass bin ``k``.  With
    ``truncate`` the result covers bins 1..n_mass; with ``extend`` it covers
    bins 1..2*n_mass (bin 1 is always empty since no pair sums to 1).
    """
    if isinstance(a, BaseMeasure) and isinstance(b, BaseMeasure) and a.grid != b.grid:
        raise ConfigurationError("convolution operands live on different mass grids")
    wa, wb = _weights_of(a), _weights_of(b)
    if wa.ndim != 1 or wa.shape != wb.shape:
        raise ConfigurationError(f"grid mismatch: shapes {wa.shape} and {wb.shape}")
    n = wa.shape[0]
    full = np.zeros(2 * n)
    # np.convolve index i+j (0-based) is mass (i+1)+(j+1) = bin i+j+2
    full[1:] = np.convolve(wa, wb)
    if range_policy == "extend":
        return full
    if range_policy == "truncate":
        return full[:n].copy()
    raise ConfigurationError(f"unknown range_policy {range_policy!r}")


def _exact_truncated_convolution(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # correctly rounded sums, so any independent double loop using fsum agrees bit for bit
    n = a.shape[0]
    out = np.zeros(n)
    for k in range(2, n + 1):
        out[k - 1] = math.fsum(float(a[i - 1]) * float(b[k - i - 1]) for i in range(1, k))
    return out


def convolution_ratios(base: BaseMeasure, order: int = 2) -> np.ndarray:
    """Per-bin ratios ``(w^{*order})_k / w_k`` over the truncated range."""
    if order < 2:
        raise ConfigurationError("order must be at least 2")
    if order > MAX_CERT_ORDER:
        raise ConfigurationError(f"order {order} exceeds the certification cap {MAX_CERT_ORDER}")
    w = np.asarray(base.weights)
    power = w
    for _ in range(order - 1):
        power = _exact_truncated_convolution(power, w)
    return power / w


def certify_convolution_constant(base, order: int = 2) -> float:
    """Exact ``R_order = max_k (w^{*order})_k / w_k`` over bins ``k <= n_mass``.

    ``R_2`` is the constant C of the base-measure condition.  Higher orders
    are diagnostics: they must satisfy ``R_n <= R_2**(n-1)``, which
    :func:`convolution_power_report` checks.
    """
    if not isinstance(base, BaseMeasure):
        base = BaseMeasure(MassGrid(len(base)), base)
    ratios = convolution_ratios(base, order)
    return float(ratios.max()) if ratios.size else 0.0


@dataclass(frozen=True)
class ConvolutionPowerReport:
    order: int
    ratio: float
    base_constant: float
    implied_bound: float
    power_bound: float
    passed: bool


def convolution_power_report(base: BaseMeasure, order: int) -> ConvolutionPowerReport:
    """Compare ``R_n`` with ``R_2**(n-1)`` (implied by induction) and ``R_2**n``."""
    c = certify_convolution_constant(base, 2)
    r = c if order == 2 else certify_convolution_constant(base, order)
    implied = c ** (order - 1)
    return ConvolutionPowerReport(order, r, c, implied, c ** order,
                                  r <= implied * (1 + 1e-12) + 1e-300)


def make_power_law_base(n_mass: int, exponent: float, unit: float = 1.0) -> BaseMeasure:
    """``w_k = k**(-exponent)``, certified on construction."""
    if exponent < 0:
        raise ConfigurationError("exponent must be non-negative")
    k = np.arange(1, n_mass + 1, dtype=float)
    return BaseMeasure(MassGrid(n_mass, unit), k ** (-float(exponent))).certified()


def laplace_profile(y, rate: float) -> np.ndarray:
    """``g(y) = exp(-rate*y) / (1+y)**2``.

    In the continuum this g satisfies ``g*g <= C g``: the ``(1+y)**-2`` tail
    is sub-convolutive and the exponential factor is multiplicative under
    convolution, so the ratio stays bounded.
    """
    y = np.asarray(y, dtype=float)
    return np.exp(-rate * y) / (1.0 + y) ** 2


def make_laplace_base(n_mass: int, unit: float, rate: float,
                      max_constant: float | None = None) -> BaseMeasure:
    """Sample ``g(k*unit)*unit`` onto the grid and certify it.

    If ``max_constant`` is given and the discrete constant exceeds it, the
    discretization is reported as broken (the grid needs refining).
    """
    if rate < 0:
        raise ConfigurationError("rate must be non-negative")
    grid = MassGrid(n_mass, unit)
    base = BaseMeasure(grid, laplace_profile(grid.masses, rate) * grid.unit).certified()
    if max_constant is not None and base.conv_constant > max_constant:
        raise ConfigurationError(
            f"discretized Laplace base has R_2 = {base.conv_constant!r} > {max_constant!r}; refine the grid")
    return base


_BASE_KEYS = {"n_mass", "unit", "weights", "family", "exponent", "rate", "conv_constant", "max_constant"}


def base_from_dict(spec: dict) -> BaseMeasure:
    """Build a base measure from its JSON object form.

    Either explicit ``weights`` or a ``family`` (``power_law`` with
    ``exponent``, ``laplace`` with ``rate``).  A declared ``conv_constant``
    is kept as the claim to verify; otherwise the exact constant is attached.
    """
    unknown = set(spec) - _BASE_KEYS
    if unknown:
        raise ConfigurationError(f"unknown base-measure keys: {sorted(unknown)}")
    n_mass = spec.get("n_mass")
    if n_mass is None:
        raise ConfigurationError("base measure needs n_mass")
    unit = float(spec.get("unit", 1.0))
    if "weights" in spec:
        if "family" in spec:
            raise ConfigurationError("give either weights or family, not both")
        base = BaseMeasure(MassGrid(n_mass, unit), spec["weights"]).certified()
    else:
        family = spec.get("family")
        if family == "power_law":
            base = make_power_law_base(n_mass, float(spec.get("exponent", 2.0)), unit)
        elif family == "laplace":
            base = make_laplace_base(n_mass, unit, float(spec.get("rate", 0.0)),
                                     spec.get("max_constant"))
        else:
            raise ConfigurationError(f"unknown base-measure family {family!r}")
    if "conv_constant" in spec:
        base = BaseMeasure(base.grid, base.weights, float(spec["conv_constant"]))
    return base


def base_to_dict(base: BaseMeasure) -> dict:
    return base.to_dict()
