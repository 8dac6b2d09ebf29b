"""Fractional perimeter and total variation on a truncated interaction graph.

Interactions couple cell pairs up to a cutoff distance with the kernel
``c_s / |x-y|^(N+s)``; the diagonal is excluded and no near-diagonal
quadrature correction is applied, so the energy is an exact discrete
convex functional with an exact dual: an antisymmetric pair weight in
[-1, 1], stored once per unordered pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BoundaryTouchError, HaloError
from .grid import GridSpec, ScalarField, SetMask, _enumerate_ball


def cs_constant(ndim: int, s: float) -> float:
    """Normalization (1-s)/omega_{N-1}; omega_1 = 2, omega_2 = pi."""
    if ndim not in (2, 3):
        raise ValueError("dimension must be 2 or 3")
    if not 0.0 < s < 1.0:
        raise ValueError("exponent s must lie in (0, 1)")
    omega = {2: 2.0, 3: math.pi}[ndim]
    return (1.0 - s) / omega


def unit_sphere_area(ndim: int) -> float:
    return {2: 2.0 * math.pi, 3: 4.0 * math.pi}[ndim]


@dataclass(frozen=True)
class FracEnergyParams:
    """Exponent, cutoff and per-offset kernel of the truncated interaction."""

    s: float
    c_s: float
    cutoff: float
    dx: float
    ndim: int
    offsets: np.ndarray       # (F, ndim) all nonzero offsets with |p| dx <= cutoff
    kernel: np.ndarray        # (F,) c_s / (|p| dx)^(N+s)
    half_offsets: np.ndarray  # (H, ndim) lexicographically positive half
    half_kernel: np.ndarray   # (H,)

    @classmethod
    def create(cls, spec: GridSpec, s: float, cutoff: float | None = None) -> "FracEnergyParams":
        if cutoff is None:
            cutoff = 8.0 * spec.dx
        if cutoff < 2.0 * spec.dx:
            raise ValueError("cutoff must be at least 2 dx")
        c_s = cs_constant(spec.ndim, s)
        offsets = _enumerate_ball(spec.ndim, spec.dx, cutoff)
        nonzero = np.any(offsets != 0, axis=1)
        offsets = offsets[nonzero]
        dist = np.sqrt((offsets.astype(np.float64) ** 2).sum(axis=1)) * spec.dx
        kernel = c_s / dist ** (spec.ndim + s)
        # positive half: first nonzero component positive
        pos = np.zeros(offsets.shape[0], dtype=bool)
        undecided = np.ones(offsets.shape[0], dtype=bool)
        for ax in range(spec.ndim):
            col = offsets[:, ax]
            pos |= undecided & (col > 0)
            undecided &= col == 0
        return cls(s=float(s), c_s=c_s, cutoff=float(cutoff), dx=spec.dx,
                   ndim=spec.ndim, offsets=offsets, kernel=kernel,
                   half_offsets=offsets[pos], half_kernel=kernel[pos])

    @property
    def reach(self) -> int:
        return int(np.abs(self.offsets).max()) if self.offsets.size else 0

    def cache_key(self) -> tuple:
        return (self.s, self.cutoff, self.dx, self.ndim, self.offsets.shape[0])

    def tail_mass(self) -> float:
        """Exact kernel mass beyond the cutoff: c_s sigma_{N-1} L^-s / s."""
        return self.c_s * unit_sphere_area(self.ndim) * self.cutoff ** (-self.s) / self.s


def _require_halo(spec: GridSpec, p: FracEnergyParams):
    if p.reach > spec.halo:
        raise HaloError("insufficient halo for cutoff %g" % p.cutoff)
    if abs(p.dx - spec.dx) > 1e-12 * spec.dx:
        raise ValueError("params built for a different cell width")


def _shift_slices(ndim: int, off) -> tuple:
    """Slices (src, dst) so that src - dst realises the pair (x, x + off)."""
    src = []
    dst = []
    for c in off:
        c = int(c)
        if c >= 0:
            src.append(slice(0, None if c == 0 else -c))
            dst.append(slice(c, None))
        else:
            src.append(slice(-c, None))
            dst.append(slice(0, c))
    return tuple(src), tuple(dst)


def js_value(u: ScalarField, p: FracEnergyParams) -> float:
    """Fractional total variation over in-grid pairs (physical units)."""
    _require_halo(u.spec, p)
    v = u.values
    total = 0.0
    for off, k in zip(p.half_offsets, p.half_kernel):
        src, dst = _shift_slices(u.spec.ndim, off)
        total += k * float(np.abs(v[src] - v[dst]).sum())
    return u.spec.cell_volume ** 2 * total


def perimeter_frac(E: SetMask, p: FracEnergyParams) -> float:
    """Fractional perimeter: kernel-weighted count of cross-phase pairs."""
    _require_halo(E.spec, p)
    if E.is_empty or E.is_full:
        return 0.0
    if E.touches_halo():
        raise BoundaryTouchError("set touches computational boundary")
    m = E.member
    total = 0.0
    for off, k in zip(p.half_offsets, p.half_kernel):
        src, dst = _shift_slices(E.spec.ndim, off)
        total += k * float((m[src] ^ m[dst]).sum())
    return E.spec.cell_volume ** 2 * total


_GRAPH_CACHE: dict = {}


@dataclass(frozen=True)
class FracPairGraph:
    """Flat-index enumeration of all in-grid unordered interacting pairs.

    Pairs are ordered by (first cell row-major, half-offset lexicographic);
    ``kappa`` is the per-pair kernel weight times the cell volume, the
    scale at which pair weights enter the per-cell divergence.
    """

    spec: GridSpec
    params: FracEnergyParams
    i_idx: np.ndarray
    j_idx: np.ndarray
    kappa: np.ndarray

    @property
    def n_pairs(self) -> int:
        return self.i_idx.shape[0]


def pair_graph(spec: GridSpec, p: FracEnergyParams) -> FracPairGraph:
    key = (spec.dims, spec.dx, spec.halo) + p.cache_key()
    hit = _GRAPH_CACHE.get(key)
    if hit is not None:
        return hit
    _require_halo(spec, p)
    flat = np.arange(spec.n_cells, dtype=np.int64).reshape(spec.dims)
    i_parts = []
    j_parts = []
    k_parts = []
    for off, k in zip(p.half_offsets, p.half_kernel):
        src, dst = _shift_slices(spec.ndim, off)
        i_parts.append(flat[src].ravel())
        j_parts.append(flat[dst].ravel())
        k_parts.append(np.full(i_parts[-1].shape[0], k * spec.cell_volume))
    i_idx = np.concatenate(i_parts)
    j_idx = np.concatenate(j_parts)
    kappa = np.concatenate(k_parts)
    order = None
    # sort by (cell, half-offset lexicographic): offsets were appended in lex
    # order per cell block, so a stable sort on the cell index suffices
    order = np.argsort(i_idx, kind="stable")
    graph = FracPairGraph(spec, p, i_idx[order], j_idx[order], kappa[order])
    _GRAPH_CACHE[key] = graph
    return graph


@dataclass
class FracDual:
    """Antisymmetric pair weight z(x, y) in [-1, 1], one value per pair.

    ``z[e]`` is the weight of the ordered pair (i_idx[e], j_idx[e]); the
    reverse orientation is minus that value by storage convention.
    """

    graph: FracPairGraph
    z: np.ndarray

    def __post_init__(self):
        self.z = np.ascontiguousarray(self.z, dtype=np.float64).reshape(self.graph.n_pairs)

    @classmethod
    def zeros(cls, graph: FracPairGraph) -> "FracDual":
        return cls(graph, np.zeros(graph.n_pairs))

    def feasibility_violation(self) -> float:
        return max(0.0, float(np.abs(self.z).max(initial=0.0) - 1.0))


def div_s(z: FracDual, p: FracEnergyParams) -> ScalarField:
    """Nonlocal divergence of an antisymmetric pair weight, per cell."""
    g = z.graph
    n = g.spec.n_cells
    w = g.kappa * z.z
    d = -(np.bincount(g.i_idx, weights=w, minlength=n)
          - np.bincount(g.j_idx, weights=w, minlength=n))
    return ScalarField(g.spec, d.reshape(g.spec.dims))


def frac_pairing(z: FracDual, u: ScalarField) -> float:
    """Pairing of z against u; equals js_value at an optimal dual."""
    g = z.graph
    v = u.values.ravel()
    return g.spec.cell_volume * float((g.kappa * z.z * (v[g.i_idx] - v[g.j_idx])).sum())


@dataclass
class FracCertificateReport:
    max_slack: float
    kernel_weighted_mean_slack: float
    bound_violation: float
    pairs: int
    ok: bool


def frac_dual_check(u: ScalarField, z: FracDual, tol: float) -> FracCertificateReport:
    """Check the sign-alignment certificate z (u(x)-u(y)) = |u(x)-u(y)|."""
    g = z.graph
    v = u.values.ravel()
    diff = v[g.i_idx] - v[g.j_idx]
    slack = np.abs(diff) - z.z * diff
    bound = z.feasibility_violation()
    wmean = float((g.kappa * slack).sum() / g.kappa.sum()) if g.n_pairs else 0.0
    mx = float(slack.max(initial=0.0))
    ok = bound <= 1e-9 and wmean <= tol
    return FracCertificateReport(mx, wmean, bound, g.n_pairs, ok)
