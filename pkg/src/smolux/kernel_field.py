"""Kernels ``mu(x; dy) = f(x; y) nu0(dy)`` stored as densities on a grid.

A :class:`KernelField` holds ``f`` on a uniform spatial box times the mass
bins of its base measure.  The norm is the max absolute entry, the discrete
form of the sup over x of the nu0-ess-sup over y.  Off-grid evaluation is
multilinear interpolation after projecting the point back into the box.
"""
from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericError
from .mass_measure import BaseMeasure, MassGrid

POLICIES = ("clamp", "wrap")
_SNAP = 1e-12


@dataclass(frozen=True)
class SpatialGrid:
    """Box ``[0, L_1) x ... x [0, L_n)`` with ``n_x`` nodes per axis at ``i*h``."""

    dim: int
    extent: tuple
    n_x: tuple
    policy: str = "clamp"

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ConfigurationError(f"dim must be 1, 2 or 3, got {self.dim!r}")
        extent = _per_axis(self.extent, self.dim, float, "extent")
        n_x = _per_axis(self.n_x, self.dim, int, "n_x")
        if any(n < 2 for n in n_x):
            raise ConfigurationError("need at least 2 grid points per axis")
        if any(not (L > 0 and math.isfinite(L)) for L in extent):
            raise ConfigurationError("extent must be positive and finite")
        if self.policy not in POLICIES:
            raise ConfigurationError(f"extension policy must be one of {POLICIES}")
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "n_x", n_x)

    @property
    def spacing(self) -> tuple:
        return tuple(L / n for L, n in zip(self.extent, self.n_x))

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.n_x))

    def nodes(self) -> np.ndarray:
        """All grid nodes, shape ``(n_sites, dim)``, row-major site order."""
        axes = [np.arange(n) * h for n, h in zip(self.n_x, self.spacing)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "extent": list(self.extent), "n_x": list(self.n_x),
                "policy": self.policy}


def _per_axis(value, dim, cast, name):
    if np.ndim(value) == 0:
        return (cast(value),) * dim
    out = tuple(cast(v) for v in value)
    if len(out) != dim:
        raise ConfigurationError(f"{name} needs {dim} entries, got {len(out)}")
    return out


@dataclass(eq=False)
class KernelField:
    grid: SpatialGrid
    base: BaseMeasure
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        shape = self.grid.n_x + (self.base.n_mass,)
        if v.shape != shape:
            if v.size == int(np.prod(shape)):
                v = v.reshape(shape)
            else:
                raise ConfigurationError(f"values have shape {v.shape}, expected {shape}")
        if not np.all(np.isfinite(v)):
            raise NumericError("kernel field values must be finite")
        self.values = v

    @classmethod
    def zeros(cls, grid: SpatialGrid, base: BaseMeasure) -> "KernelField":
        return cls(grid, base, np.zeros(grid.n_x + (base.n_mass,)))

    @classmethod
    def from_function(cls, grid, base, func) -> "KernelField":
        """Sample ``func(x, y)`` with x of shape (n_sites, dim) and y of shape (n_mass,)."""
        vals = np.asarray(func(grid.nodes(), base.masses), dtype=float)
        return cls(grid, base, vals.reshape(grid.n_x + (base.n_mass,)))

    @property
    def flat(self) -> np.ndarray:
        """View of shape ``(n_sites, n_mass)``."""
        return self.values.reshape(self.grid.n_sites, self.base.n_mass)

    def like(self, values) -> "KernelField":
        return KernelField(self.grid, self.base, np.asarray(values).reshape(self.values.shape))

    def copy(self) -> "KernelField":
        return self.like(self.values.copy())

    def norm(self) -> float:
        return norm(self)


def _check_compatible(a: KernelField, b: KernelField):
    if a.grid != b.grid or a.values.shape != b.values.shape:
        raise ConfigurationError("kernel fields live on different spatial grids")
    if a.base is not b.base and (a.base.grid != b.base.grid
                                 or not np.array_equal(a.base.weights, b.base.weights)):
        raise ConfigurationError("kernel fields use different base measures")


def norm(field: KernelField) -> float:
    if field.values.size == 0:
        return 0.0
    return float(np.max(np.abs(field.values)))


def axpy(alpha: float, x: KernelField, y: KernelField) -> KernelField:
    _check_compatible(x, y)
    return x.like(alpha * x.values + y.values)


def scale(alpha: float, x: KernelField) -> KernelField:
    return x.like(alpha * x.values)


def interpolation_stencil(grid: SpatialGrid, points) -> tuple:
    """Corner site indices and multilinear weights for arbitrary points.

    Returns ``(idx, wts)`` of shape ``(P, 2**dim)``; ``idx`` are flat
    row-major site indices and each row of ``wts`` is nonnegative with sum 1.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1) if grid.dim > 1 or pts.size == 1 else pts.reshape(-1, 1)
    if pts.shape[-1] != grid.dim:
        raise ConfigurationError(f"points have dimension {pts.shape[-1]}, grid has {grid.dim}")
    if not np.all(np.isfinite(pts)):
        raise NumericError("cannot evaluate a kernel field at a non-finite point")
    n_pts = pts.shape[0]
    lo_idx = np.empty((n_pts, grid.dim), dtype=np.int64)
    hi_idx = np.empty((n_pts, grid.dim), dtype=np.int64)
    frac = np.empty((n_pts, grid.dim))
    for d, (n, h, L) in enumerate(zip(grid.n_x, grid.spacing, grid.extent)):
        if grid.policy == "clamp":
            s = np.clip(pts[:, d], 0.0, L - h) / h
        else:
            s = np.mod(pts[:, d], L) / h
        i0 = np.floor(s)
        t = s - i0
        up = t > 1.0 - _SNAP
        i0 = i0 + up
        t = np.where(up | (t < _SNAP), 0.0, t)
        i0 = i0.astype(np.int64)
        if grid.policy == "clamp":
            top = i0 >= n - 1
            t = np.where(top, 1.0, t)
            i0 = np.where(top, n - 2, i0)
            i1 = i0 + 1
        else:
            i0 = i0 % n
            i1 = (i0 + 1) % n
        lo_idx[:, d], hi_idx[:, d], frac[:, d] = i0, i1, t
    strides = np.array([int(np.prod(grid.n_x[d + 1:])) for d in range(grid.dim)], dtype=np.int64)
    corners = list(itertools.product((0, 1), repeat=grid.dim))
    idx = np.empty((n_pts, len(corners)), dtype=np.int64)
    wts = np.empty((n_pts, len(corners)))
    for c, bits in enumerate(corners):
        flat = np.zeros(n_pts, dtype=np.int64)
        w = np.ones(n_pts)
        for d, bit in enumerate(bits):
            flat += (hi_idx[:, d] if bit else lo_idx[:, d]) * strides[d]
            w = w * (frac[:, d] if bit else 1.0 - frac[:, d])
        idx[:, c], wts[:, c] = flat, w
    return idx, wts


def eval_points(field: KernelField, points, mass_bins=None) -> np.ndarray:
    """Interpolate at many points; result shape ``(P, n_mass)`` or ``(P,)``.

    ``mass_bins`` are 0-based bin positions (a scalar selects one bin).
    """
    idx, wts = interpolation_stencil(field.grid, points)
    flat = field.flat if mass_bins is None else field.flat[:, mass_bins]
    if flat.ndim == 1:
        return np.einsum("pc,pc->p", wts, flat[idx])
    return np.einsum("pc,pcm->pm", wts, flat[idx])


def eval(field: KernelField, point, mass_bin: int) -> float:  # noqa: A001 - operation name
    """Value of ``f(point; y)`` for one 0-based mass bin."""
    pt = np.asarray(point, dtype=float).reshape(1, field.grid.dim)
    return float(eval_points(field, pt, mass_bin)[0])


def equicontinuity_modulus(field: KernelField, delta: float) -> float:
    """Max of ``|f(x;y) - f(x';y)|`` over node pairs with ``|x - x'| <= delta``.

    Under ``wrap`` the distance is the periodic one.  This is a diagnostic:
    every field on a finite grid is trivially equicontinuous.
    """
    grid = field.grid
    h = np.array(grid.spacing)
    if delta < h.min() * (1 - 1e-12):
        raise ConfigurationError(f"delta={delta} is below the grid spacing {h.min()}")
    reach = [int(math.floor(delta / hd + 1e-9)) for hd in h]
    vals = field.values
    best = 0.0
    for off in itertools.product(*[range(-r, r + 1) for r in reach]):
        if not any(off):
            continue
        if math.fsum((o * hd) ** 2 for o, hd in zip(off, h)) > delta ** 2 * (1 + 1e-12):
            continue
        if grid.policy == "wrap":
            shifted = np.roll(vals, shift=off, axis=tuple(range(grid.dim)))
            diff = np.abs(shifted - vals)
        else:
            src, dst = [], []
            skip = False
            for o, n in zip(off, grid.n_x):
                if abs(o) >= n:
                    skip = True
                    break
                src.append(slice(max(0, -o), n - max(0, o)))
                dst.append(slice(max(0, o), n - max(0, -o)))
            if skip:
                continue
            diff = np.abs(vals[tuple(dst)] - vals[tuple(src)])
        if diff.size:
            best = max(best, float(diff.max()))
    return best


# -- binary snapshots -------------------------------------------------------

_POLICY_BYTE = {"clamp": 0, "wrap": 1}


def snapshot_bytes(field: KernelField) -> bytes:
    """Little-endian header then row-major float64 values (space outer, mass inner).

    Header: int32 dim, int32 n_x per axis, int32 n_mass, float64 unit,
    float64 extent per axis, uint8 policy (0 clamp, 1 wrap).
    """
    g = field.grid
    head = struct.pack(f"<i{g.dim}ii", g.dim, *g.n_x, field.base.n_mass)
    head += struct.pack(f"<d{g.dim}dB", field.base.grid.unit, *g.extent, _POLICY_BYTE[g.policy])
    return head + np.ascontiguousarray(field.values, dtype="<f8").tobytes()


def write_snapshot(field: KernelField, path) -> None:
    with open(path, "wb") as fh:
        fh.write(snapshot_bytes(field))


def parse_snapshot(data: bytes) -> tuple:
    """Decode a snapshot into ``(grid, n_mass, unit, values)``."""
    (dim,) = struct.unpack_from("<i", data, 0)
    if dim not in (1, 2, 3):
        raise ConfigurationError(f"corrupt snapshot header: dim={dim}")
    off = 4
    n_x = struct.unpack_from(f"<{dim}i", data, off)
    off += 4 * dim
    (n_mass,) = struct.unpack_from("<i", data, off)
    off += 4
    unit, *extent = struct.unpack_from(f"<d{dim}d", data, off)
    off += 8 * (dim + 1)
    (policy,) = struct.unpack_from("<B", data, off)
    off += 1
    grid = SpatialGrid(dim, tuple(extent), tuple(n_x), {v: k for k, v in _POLICY_BYTE.items()}[policy])
    count = int(np.prod(n_x)) * n_mass
    values = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(float)
    return grid, n_mass, unit, values.reshape(tuple(n_x) + (n_mass,))


def read_snapshot(path, base: BaseMeasure) -> KernelField:
    with open(path, "rb") as fh:
        grid, n_mass, unit, values = parse_snapshot(fh.read())
    if base.grid != MassGrid(n_mass, unit):
        raise ConfigurationError("snapshot mass grid does not match the supplied base measure")
    return KernelField(grid, base, values)
