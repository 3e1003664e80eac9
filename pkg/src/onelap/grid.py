"""
Uniform Cartesian grids with a Dirichlet collar, nodal fields and the
forward-difference gradient / divergence pair.

Conventions used throughout the package:

* A grid is a full ``shape`` array of cells of side ``spacing``.  Every cell
  carries one of three flags: ``EXTERIOR``, ``BOUNDARY`` (the one-cell collar
  that stores Dirichlet data) or ``INTERIOR`` (the unknowns).
* Scalar fields store one value per cell of the full array; exterior cells
  hold 0 and are never read.
* Vector fields are face based: component ``k`` stored at cell ``c`` is the
  value on the face between ``c`` and ``c + e_k``.  A face is *active* when
  both cells are in the closed domain and at least one of them is interior.

With these conventions ``divergence`` is exactly the negative adjoint of
``gradient`` for the ``h**N``-weighted inner products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

EXTERIOR = 0
BOUNDARY = 1
INTERIOR = 2


class GridMismatchError(ValueError):
    """Raised when fields defined on different grids are combined."""


class Grid:
    """Voxelized domain with spacing, mask flags and cached stencils.

    Use the constructors :meth:`box`, :meth:`ball` or :meth:`from_mask`.
    Instances are treated as immutable.
    """

    def __init__(self, interior, spacing, origin=None, kind="custom", params=()):
        interior = np.asarray(interior, dtype=bool)
        if interior.ndim < 2:
            raise ValueError("grids need dim >= 2")
        if min(interior.shape) < 3:
            raise ValueError(f"every axis needs at least 3 cells, got {interior.shape}")
        spacing = float(spacing)
        if not spacing > 0:
            raise ValueError("spacing must be positive")
        if not interior.any():
            raise ValueError("domain has no interior cell")
        for ax in range(interior.ndim):
            lo = np.take(interior, 0, axis=ax)
            hi = np.take(interior, -1, axis=ax)
            if lo.any() or hi.any():
                raise ValueError("interior touches the array edge; no room for the boundary collar")

        mask = np.full(interior.shape, EXTERIOR, dtype=np.uint8)
        near = np.zeros_like(interior)
        for ax in range(interior.ndim):
            near |= np.roll(interior, 1, axis=ax) | np.roll(interior, -1, axis=ax)
        mask[near] = BOUNDARY
        mask[interior] = INTERIOR
        mask.setflags(write=False)

        self.mask = mask
        self.spacing = spacing
        self.shape = tuple(interior.shape)
        self.dim = interior.ndim
        if origin is None:
            origin = np.full(self.dim, 0.5 * spacing)
        self.origin = np.asarray(origin, dtype=float)
        self.kind = kind
        self.params = tuple(params)

    # -- constructors -------------------------------------------------------

    @classmethod
    def box(cls, shape, spacing, origin=None):
        """Rectangle with the outermost cell layer acting as the collar.

        The interior is the ``(shape - 2)`` block; cell ``(1, ..., 1)`` is the
        first unknown.  By default the cell centers sit at ``(i - 0.5) * h`` so
        that the interior covers ``[0, (shape-2) h]`` along each axis.
        """
        shape = tuple(int(s) for s in shape)
        interior = np.zeros(shape, dtype=bool)
        interior[tuple(slice(1, -1) for _ in shape)] = True
        if origin is None:
            origin = np.full(len(shape), -0.5 * spacing)
        return cls(interior, spacing, origin, kind="box", params=(shape,))

    @classmethod
    def ball(cls, dim, radius, cells, center=None):
        """Rasterized ball with ``cells`` cells across its diameter.

        The spacing is ``2 * radius / cells``.  A cell is interior when its
        center lies within ``radius`` of ``center`` (ties count as interior).
        """
        cells = int(cells)
        radius = float(radius)
        if radius <= 0 or cells < 2:
            raise ValueError("ball needs radius > 0 and at least 2 cells across")
        h = 2.0 * radius / cells
        n = cells + 4
        center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
        origin = center - (n / 2 - 0.5) * h
        axes = [origin[k] + h * np.arange(n) for k in range(dim)]
        xs = np.meshgrid(*axes, indexing="ij")
        r2 = sum((x - c) ** 2 for x, c in zip(xs, center))
        # ties on the sphere count as interior; the slack absorbs rounding in r2
        interior = r2 <= radius * radius * (1 + 1e-12)
        return cls(interior, h, origin, kind="ball", params=(tuple(center), radius))

    @classmethod
    def from_mask(cls, interior, spacing, origin=None):
        return cls(interior, spacing, origin, kind="custom")

    # -- geometry -----------------------------------------------------------

    @property
    def cell_volume(self):
        return self.spacing**self.dim

    @cached_property
    def interior(self):
        return self.mask == INTERIOR

    @cached_property
    def boundary(self):
        return self.mask == BOUNDARY

    @cached_property
    def closure(self):
        return self.mask != EXTERIOR

    @cached_property
    def interior_idx(self):
        """Flat (C-order) indices of the interior cells: the unknown ordering."""
        return np.flatnonzero(self.interior.ravel())

    @property
    def n_interior(self):
        return int(self.interior_idx.size)

    @property
    def volume(self):
        """Discrete measure of the domain: interior cell count times ``h**N``."""
        return self.n_interior * self.cell_volume

    def coords(self):
        """Cell-center coordinates, array of shape ``(dim, *shape)``."""
        axes = [self.origin[k] + self.spacing * np.arange(n) for k, n in enumerate(self.shape)]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    def radius_from(self, center=None):
        """Distance of every cell center to ``center`` (default: the origin)."""
        x = self.coords()
        if center is None:
            center = np.zeros(self.dim)
        return np.sqrt(sum((x[k] - center[k]) ** 2 for k in range(self.dim)))

    def same_as(self, other):
        return self is other or (
            self.shape == other.shape
            and self.spacing == other.spacing
            and np.array_equal(self.mask, other.mask)
        )

    # -- stencils -----------------------------------------------------------

    @cached_property
    def face_active(self):
        """Boolean array ``(dim, *shape)``: face between ``c`` and ``c + e_k`` is active."""
        closure = self.closure
        interior = self.interior
        out = np.zeros((self.dim,) + self.shape, dtype=bool)
        for k in range(self.dim):
            lo = [slice(None)] * self.dim
            hi = [slice(None)] * self.dim
            lo[k] = slice(0, -1)
            hi[k] = slice(1, None)
            lo, hi = tuple(lo), tuple(hi)
            out[(k,) + lo] = closure[lo] & closure[hi] & (interior[lo] | interior[hi])
        out.setflags(write=False)
        return out

    @cached_property
    def gradient_cells(self):
        """Flat indices of cells owning at least one active face."""
        return np.flatnonzero(self.face_active.any(axis=0).ravel())

    @cached_property
    def gradient_matrix(self):
        """Sparse forward-difference operator on the interior unknowns.

        Shape ``(dim * m, n_interior)`` with ``m = len(gradient_cells)``; rows are
        grouped by component.  Boundary values are taken as zero, which is the
        Dirichlet collar used by every solver in the package.
        """
        h = self.spacing
        ncell = int(np.prod(self.shape))
        col_of = np.full(ncell, -1, dtype=np.int64)
        col_of[self.interior_idx] = np.arange(self.n_interior)
        gcells = self.gradient_cells
        m = gcells.size
        strides = np.cumprod((1,) + self.shape[::-1])[:-1][::-1]
        rows, cols, vals = [], [], []
        for k in range(self.dim):
            act = self.face_active[k].ravel()[gcells]
            r = np.flatnonzero(act)
            here = gcells[r]
            there = here + strides[k]
            for cells, sign in ((here, -1.0), (there, 1.0)):
                c = col_of[cells]
                keep = c >= 0
                rows.append(k * m + r[keep])
                cols.append(c[keep])
                vals.append(np.full(keep.sum(), sign / h))
        G = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.dim * m, self.n_interior),
        )
        G.sum_duplicates()
        return G

    def __repr__(self):
        return (
            f"Grid(dim={self.dim}, shape={self.shape}, spacing={self.spacing:.6g}, "
            f"kind={self.kind!r}, interior={self.n_interior})"
        )


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScalarField:
    """One real per cell of ``grid``; exterior entries are kept at zero."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values have shape {v.shape}, grid is {self.grid.shape}")
        v = np.where(self.grid.closure, v, 0.0)
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains NaN or Inf")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_interior(cls, grid, vec, boundary=0.0):
        """Build a field from interior values (in ``grid.interior_idx`` order)."""
        full = np.zeros(int(np.prod(grid.shape)))
        full[np.flatnonzero(grid.boundary.ravel())] = boundary
        full[grid.interior_idx] = vec
        return cls(grid, full.reshape(grid.shape))

    @classmethod
    def from_function(cls, grid, func):
        """Evaluate ``func(x)`` at cell centers; ``x`` has shape ``(dim, *shape)``."""
        return cls(grid, func(grid.coords()))

    @property
    def interior_values(self):
        return self.values.ravel()[self.grid.interior_idx]

    @property
    def trace(self):
        """Values on the boundary collar (a mask filter, no extrapolation)."""
        return self.values[self.grid.boundary]

    def with_zero_trace(self):
        return ScalarField(self.grid, np.where(self.grid.interior, self.values, 0.0))

    def has_zero_trace(self, atol=0.0):
        return bool(np.all(np.abs(self.trace) <= atol))

    def __add__(self, other):
        _check_same(self.grid, other.grid)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other):
        _check_same(self.grid, other.grid)
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, a):
        return ScalarField(self.grid, self.values * float(a))

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class VectorField:
    """Face-based vector field, ``components`` has shape ``(dim, *shape)``."""

    grid: Grid
    components: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.components, dtype=float)
        if c.shape != (self.grid.dim,) + self.grid.shape:
            raise ValueError("components must have shape (dim, *grid.shape)")
        c = np.where(self.grid.face_active, c, 0.0)
        if not np.all(np.isfinite(c)):
            raise ValueError("vector field contains NaN or Inf")
        object.__setattr__(self, "components", _frozen(c))

    def magnitude(self):
        """Per-cell Euclidean norm of the stored components."""
        return np.sqrt(np.sum(self.components**2, axis=0))

    def sup_norm(self):
        return float(self.magnitude().max())

    def lq_norm(self, q):
        """Discrete ``L^q`` norm of the magnitude over the gradient cells."""
        mag = self.magnitude().ravel()[self.grid.gradient_cells]
        return float((np.sum(mag**q) * self.grid.cell_volume) ** (1.0 / q))


def _check_same(a, b):
    if not a.same_as(b):
        raise GridMismatchError("fields live on different grids")


def _shift(k, dim, lo, hi):
    s = [slice(None)] * dim
    s[k] = slice(lo, hi)
    return tuple(s)


def gradient(u):
    """Forward differences on active faces, scaled by ``1/h``.

    Faces leading out of the closed domain are inactive and give 0; faces
    between an interior cell and the collar use the stored boundary value.
    """
    grid = u.grid
    out = np.zeros((grid.dim,) + grid.shape)
    v = u.values
    for k in range(grid.dim):
        lo = _shift(k, grid.dim, 0, -1)
        hi = _shift(k, grid.dim, 1, None)
        out[(k,) + lo] = (v[hi] - v[lo]) / grid.spacing
    return VectorField(grid, out)


def divergence(z):
    """Backward differences of active face values; ``<div z, u> = -<z, grad u>``."""
    grid = z.grid
    out = np.zeros(grid.shape)
    c = z.components  # inactive faces are already zero
    for k in range(grid.dim):
        lo = _shift(k, grid.dim, 0, -1)
        hi = _shift(k, grid.dim, 1, None)
        out += c[k]
        out[hi] -= c[k][lo]
    out /= grid.spacing
    return ScalarField(grid, np.where(grid.closure, out, 0.0))


def inner(a, b):
    """``h**N``-weighted inner product of two scalar or two vector fields."""
    _check_same(a.grid, b.grid)
    if isinstance(a, ScalarField):
        return float(np.sum(a.values * b.values) * a.grid.cell_volume)
    return float(np.sum(a.components * b.components) * a.grid.cell_volume)


# -- truncations --------------------------------------------------------------


def truncate_tk(s, k):
    """Cap at level ``k``: ``max(-k, min(s, k))``."""
    if not k > 0:
        raise ValueError("k must be positive")
    return np.clip(s, -k, k)


def truncate_gk(s, k):
    """Excess beyond level ``k``; ``truncate_tk(s, k) + truncate_gk(s, k) == s``."""
    if not k > 0:
        raise ValueError("k must be positive")
    s = np.asarray(s, dtype=float)
    # written as s - T_k(s) so that the identity holds in floating point
    return s - np.clip(s, -k, k)


def vdelta(s, delta):
    """Piecewise linear cut-off: 1 below ``delta``, 0 above ``2*delta``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    s = np.asarray(s, dtype=float)
    return np.clip((2.0 * delta - s) / delta, 0.0, 1.0)


# -- constants ----------------------------------------------------------------


@dataclass(frozen=True)
class Constants:
    n: int
    omega_n: float
    s1: float
    s1_tilde: float


def unit_ball_volume(n):
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def sobolev_constants(n):
    """BV embedding constants into ``L^{N/(N-1)}`` and the Lorentz space ``L^{N/(N-1),1}``."""
    n = int(n)
    if n < 2:
        raise ValueError("dimension must be at least 2")
    omega = unit_ball_volume(n)
    root = omega ** (1.0 / n)
    return Constants(n=n, omega_n=omega, s1=1.0 / (n * root), s1_tilde=1.0 / ((n - 1) * root))


# -- discrete norms -----------------------------------------------------------


def lebesgue_norm(values, cell_volume, q):
    values = np.abs(np.asarray(values, dtype=float))
    return float((np.sum(values**q) * cell_volume) ** (1.0 / q))


def lorentz_weak_norm(values, cell_volume, n):
    """Marcinkiewicz quasi-norm ``sup_t t |{|f| > t}|^{1/N}`` by rearrangement."""
    a = np.sort(np.abs(np.asarray(values, dtype=float)).ravel())[::-1]
    if a.size == 0:
        return 0.0
    # for t just below a[j] the superlevel set holds every value >= a[j]
    counts = np.searchsorted(-a, -a, side="right")
    return float(np.max(a * (counts * cell_volume) ** (1.0 / n)))


# -- field I/O ----------------------------------------------------------------


def _header(tag, grid):
    dims = " ".join(str(s) for s in grid.shape)
    return f"onelap-{tag} v1 {grid.dim} {dims} {grid.spacing!r}\n".encode()


def _read_header(raw, tag):
    nl = raw.index(b"\n")
    parts = raw[:nl].decode().split()
    if len(parts) < 4 or parts[0] != f"onelap-{tag}" or parts[1] != "v1":
        raise ValueError(f"not an onelap-{tag} v1 file")
    dim = int(parts[2])
    shape = tuple(int(s) for s in parts[3 : 3 + dim])
    spacing = float(parts[3 + dim])
    return shape, spacing, raw[nl + 1 :]


def encode_field(field):
    """Header line then raw little-endian float64 values in row-major order."""
    return _header("field", field.grid) + np.ascontiguousarray(field.values, dtype="<f8").tobytes()


def write_field(path, field):
    Path(path).write_bytes(encode_field(field))


def read_field(path, grid):
    shape, spacing, body = _read_header(Path(path).read_bytes(), "field")
    if shape != grid.shape or spacing != grid.spacing:
        raise GridMismatchError("field file does not match the grid")
    return ScalarField(grid, np.frombuffer(body, dtype="<f8").reshape(shape))


def encode_mask(grid, mask=None):
    """Header line then uint8 flags; defaults to the grid's own mask."""
    m = grid.mask if mask is None else np.asarray(mask)
    return _header("mask", grid) + np.ascontiguousarray(m, dtype=np.uint8).tobytes()


def write_mask(path, grid, mask=None):
    Path(path).write_bytes(encode_mask(grid, mask))


def read_mask(path):
    shape, spacing, body = _read_header(Path(path).read_bytes(), "mask")
    return np.frombuffer(body, dtype=np.uint8).reshape(shape).copy(), spacing
