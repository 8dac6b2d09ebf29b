"""Uniform-grid geometry: fields, masks, ball stencils, halo bookkeeping.

Fields and masks live on a uniform, isotropic rectangular grid (2 or 3
axes) stored row-major.  All windowed energies enumerate lattice-ball
stencils produced here, and the determinism contract (fixed lexicographic
offset order, first-occurrence tie breaking) is established at this level.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import HaloError, WindowBoundsError

# relative slack when testing |p|*dx <= radius, absorbs fp noise in radius/dx
_RADIUS_RTOL = 1e-12


@dataclass(frozen=True)
class GridSpec:
    """Shape, cell width and halo width of a uniform grid."""

    dims: tuple
    dx: float
    halo: int = 0

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) not in (2, 3):
            raise ValueError("grids must have 2 or 3 axes, got %d" % len(dims))
        if any(n < 4 for n in dims):
            raise ValueError("every axis needs at least 4 cells, got %r" % (dims,))
        if not (self.dx > 0.0 and np.isfinite(self.dx)):
            raise ValueError("dx must be positive and finite")
        if self.halo < 0 or 2 * self.halo >= min(dims):
            raise ValueError("halo must satisfy 0 <= halo < min(dims)/2")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.dims))

    @property
    def cell_volume(self) -> float:
        return self.dx ** self.ndim

    @property
    def strides(self) -> tuple:
        """Row-major flat-index strides, in cells."""
        s = [1] * self.ndim
        for i in range(self.ndim - 2, -1, -1):
            s[i] = s[i + 1] * self.dims[i + 1]
        return tuple(s)

    def cell_centers(self):
        """Physical coordinates of cell centers, origin at the grid center.

        Returns one array of shape ``dims`` per axis.
        """
        axes = [
            (np.arange(n, dtype=np.float64) - (n - 1) / 2.0) * self.dx
            for n in self.dims
        ]
        return np.meshgrid(*axes, indexing="ij")

    def flat_index(self, idx) -> int:
        return int(np.ravel_multi_index(tuple(int(i) for i in idx), self.dims))


@dataclass
class ScalarField:
    """Real values sampled at the cell centers of a grid."""

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != tuple(self.spec.dims):
            raise ValueError("values shape %r does not match dims %r" % (v.shape, self.spec.dims))
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        self.values = v

    @classmethod
    def full(cls, spec: GridSpec, value: float) -> "ScalarField":
        return cls(spec, np.full(spec.dims, float(value)))

    def copy(self) -> "ScalarField":
        return ScalarField(self.spec, self.values.copy())


@dataclass
class SetMask:
    """Binary set on a grid, one boolean per cell."""

    spec: GridSpec
    member: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.member, dtype=bool)
        if m.shape != tuple(self.spec.dims):
            raise ValueError("member shape %r does not match dims %r" % (m.shape, self.spec.dims))
        self.member = m

    @classmethod
    def empty(cls, spec: GridSpec) -> "SetMask":
        return cls(spec, np.zeros(spec.dims, dtype=bool))

    @property
    def count(self) -> int:
        return int(self.member.sum())

    @property
    def is_empty(self) -> bool:
        return not self.member.any()

    @property
    def is_full(self) -> bool:
        return bool(self.member.all())

    def complement(self) -> "SetMask":
        return SetMask(self.spec, ~self.member)

    def touches_halo(self) -> bool:
        if self.spec.halo == 0:
            return False
        return bool((self.member & halo_band(self.spec).member).any())


@dataclass(frozen=True)
class BallStencil:
    """Lattice points p with |p|*dx <= radius, in fixed lexicographic order."""

    radius: float
    offsets: np.ndarray  # (S, ndim) int64
    radius_cells: float
    dx: float

    @property
    def size(self) -> int:
        return self.offsets.shape[0]

    @property
    def reach(self) -> tuple:
        """Per-axis maximum |p_i|; the window half-width in cells."""
        if self.size == 0:
            return ()
        return tuple(int(m) for m in np.abs(self.offsets).max(axis=0))

    def cache_key(self) -> tuple:
        return (self.radius, self.dx, self.size, self.offsets.shape[1])


def _enumerate_ball(ndim: int, dx: float, radius: float) -> np.ndarray:
    rc = radius / dx
    m = int(np.floor(rc * (1.0 + _RADIUS_RTOL) + _RADIUS_RTOL))
    lim = rc * rc * (1.0 + _RADIUS_RTOL) + _RADIUS_RTOL
    offs = [
        p
        for p in itertools.product(range(-m, m + 1), repeat=ndim)
        if sum(c * c for c in p) <= lim
    ]
    # itertools.product over ascending ranges already yields lexicographic order
    return np.array(offs, dtype=np.int64).reshape(len(offs), ndim)


def ball_offsets(spec: GridSpec, radius: float) -> BallStencil:
    """Closed discrete ball stencil of the given physical radius.

    Raises ``HaloError`` when the stencil cannot sit one cell inside the
    halo band, which every windowed energy requires.
    """
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    offsets = _enumerate_ball(spec.ndim, spec.dx, radius)
    reach = int(np.abs(offsets).max()) if offsets.size else 0
    if reach + 1 > spec.halo:
        raise HaloError(
            "stencil exceeds halo: reach %d cells needs halo >= %d, have %d"
            % (reach, reach + 1, spec.halo)
        )
    return BallStencil(radius=float(radius), offsets=offsets,
                       radius_cells=float(radius) / spec.dx, dx=spec.dx)


def window_extrema(u: ScalarField, st: BallStencil, w):
    """Min and max of ``u`` over the stencil window centered at cell ``w``.

    Returns ``(min, max, argmin_offset, argmax_offset)``; ties resolve to
    the closest offset first, then the lexicographically smallest, so a
    constant window reports the zero offset twice.
    """
    w = tuple(int(i) for i in w)
    dims = u.spec.dims
    if len(w) != len(dims):
        raise ValueError("window index has wrong dimension")
    reach = st.reach
    for i, wi in enumerate(w):
        if wi - reach[i] < 0 or wi + reach[i] >= dims[i]:
            raise WindowBoundsError("window out of bounds at %r" % (w,))
    flat = u.spec.flat_index(w) + st.offsets @ np.array(u.spec.strides, dtype=np.int64)
    vals = u.values.ravel()[flat]
    norms = (st.offsets * st.offsets).sum(axis=1)

    def pick(tied_idx):
        order = np.lexsort((tied_idx, norms[tied_idx]))
        return int(tied_idx[order[0]])

    imin = pick(np.flatnonzero(vals == vals.min()))
    imax = pick(np.flatnonzero(vals == vals.max()))
    return (
        float(vals[imin]),
        float(vals[imax]),
        tuple(int(c) for c in st.offsets[imin]),
        tuple(int(c) for c in st.offsets[imax]),
    )


def halo_band(spec: GridSpec) -> SetMask:
    """Mask of cells within ``halo`` cells of the grid boundary."""
    m = np.zeros(spec.dims, dtype=bool)
    h = spec.halo
    if h > 0:
        for ax in range(spec.ndim):
            sl_lo = [slice(None)] * spec.ndim
            sl_hi = [slice(None)] * spec.ndim
            sl_lo[ax] = slice(0, h)
            sl_hi[ax] = slice(spec.dims[ax] - h, spec.dims[ax])
            m[tuple(sl_lo)] = True
            m[tuple(sl_hi)] = True
    return SetMask(spec, m)


def free_cells(spec: GridSpec) -> np.ndarray:
    """Boolean array marking the non-halo cells."""
    return ~halo_band(spec).member


_WINDOW_CACHE: dict = {}


def fitting_windows(spec: GridSpec, st: BallStencil):
    """Flat indices of all window centers whose stencil fits in the grid.

    Returns ``(centers, gather)`` where ``centers`` has shape (W,) and
    ``gather`` has shape (W, S): flat cell indices of each window's
    stencil points, in stencil order.  Cached per (grid, stencil).
    """
    key = (spec.dims, spec.dx, spec.halo) + st.cache_key()
    hit = _WINDOW_CACHE.get(key)
    if hit is not None:
        return hit
    reach = st.reach
    ranges = [np.arange(reach[i], spec.dims[i] - reach[i]) for i in range(spec.ndim)]
    if any(len(r) == 0 for r in ranges):
        centers = np.zeros(0, dtype=np.int64)
        gather = np.zeros((0, st.size), dtype=np.int64)
    else:
        mesh = np.meshgrid(*ranges, indexing="ij")
        centers = np.ravel_multi_index([m.ravel() for m in mesh], spec.dims).astype(np.int64)
        off_flat = st.offsets @ np.array(spec.strides, dtype=np.int64)
        gather = centers[:, None] + off_flat[None, :]
    _WINDOW_CACHE[key] = (centers, gather)
    return centers, gather
