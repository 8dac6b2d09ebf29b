"""Slow, independent ground-truth generators for cross-validation.

Everything here recomputes energies, distances and window scans from
first principles with its own loops, sharing no kernels with the fast
paths it checks.  The geometric enumerator walks every subset of the
interior cells; the convex-programming reference solves the step problem
through a disciplined-convex model, and the subgradient descent provides
an additional, fully self-contained iterative cross-check.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceededError
from .frac_energy import FracEnergyParams
from .grid import BallStencil, GridSpec, ScalarField, SetMask, halo_band
from .osc_energy import OscEnergyParams
from .rof_solver import RofProblem


@dataclass(frozen=True)
class EnumerationBudget:
    max_cells: int = 16
    timeout: float = 120.0

    def __post_init__(self):
        if self.max_cells > 20:
            raise ValueError("enumeration capped at 20 cells")


@dataclass
class EnumerationResult:
    min_value: float
    minimal_mask: SetMask
    maximal_mask: SetMask
    n_minimizers: int
    tied_masks: list
    lattice_closed: bool


def _interior_cells(spec: GridSpec):
    inner = ~halo_band(spec).member
    return np.argwhere(inner)


def _osc_energy_tables(spec: GridSpec, p: OscEnergyParams, cells):
    """Per-window bit masks for the mixed-window perimeter over subsets.

    Returns (masks, has_halo, scale): window w is mixed for subset F iff
    (F & masks[w]) is neither empty nor, when the window contains no
    fixed-exterior cell, all of masks[w].
    """
    cell_index = -np.ones(spec.dims, dtype=np.int64)
    for i, c in enumerate(cells):
        cell_index[tuple(c)] = i
    st = p.stencil
    reach = st.reach
    masks = []
    has_exterior = []
    ranges = [range(reach[i], spec.dims[i] - reach[i]) for i in range(spec.ndim)]
    for w in itertools.product(*ranges):
        bits = 0
        exterior = False
        for off in st.offsets:
            cell = tuple(int(w[i] + off[i]) for i in range(spec.ndim))
            idx = cell_index[cell]
            if idx < 0:
                exterior = True
            else:
                bits |= 1 << int(idx)
        masks.append(bits)
        has_exterior.append(exterior)
    scale = spec.cell_volume / (2.0 * p.r)
    return (np.array(masks, dtype=np.uint64),
            np.array(has_exterior, dtype=bool), scale)


def _osc_perimeters(spec, p, cells, subsets):
    masks, has_ext, scale = _osc_energy_tables(spec, p, cells)
    per = np.zeros(subsets.shape[0])
    for bits, ext in zip(masks, has_ext):
        hit = (subsets & bits) != 0
        if ext:
            mixed = hit
        else:
            mixed = hit & ((subsets & bits) != bits)
        per += mixed
    return per * scale


def _frac_perimeters(spec, p: FracEnergyParams, cells, subsets):
    n = cells.shape[0]
    pos = [tuple(int(x) for x in c) for c in cells]
    pos_index = {c: i for i, c in enumerate(pos)}
    inner = ~halo_band(spec).member
    cv2 = spec.cell_volume ** 2
    per = np.zeros(subsets.shape[0])
    # interior-interior pairs: kernel-weighted XOR of the two bits
    for i, ci in enumerate(pos):
        for j in range(i + 1, n):
            cj = pos[j]
            d2 = sum((a - b) ** 2 for a, b in zip(ci, cj)) * spec.dx ** 2
            if d2 > p.cutoff ** 2 or d2 == 0.0:
                continue
            k = p.c_s / d2 ** ((spec.ndim + p.s) / 2.0)
            bi = (subsets >> np.uint64(i)) & np.uint64(1)
            bj = (subsets >> np.uint64(j)) & np.uint64(1)
            per += (bi ^ bj) * (k * cv2)
    # interior cell vs fixed exterior: linear in the bit
    ext_weight = np.zeros(n)
    for i, ci in enumerate(pos):
        for off in p.offsets:
            cell = tuple(int(ci[ax] + off[ax]) for ax in range(spec.ndim))
            if any(c < 0 or c >= spec.dims[ax] for ax, c in enumerate(cell)):
                continue
            if inner[cell]:
                continue
            d2 = sum((int(o) * spec.dx) ** 2 for o in off)
            ext_weight[i] += p.c_s / d2 ** ((spec.ndim + p.s) / 2.0) * cv2
    for i in range(n):
        bi = (subsets >> np.uint64(i)) & np.uint64(1)
        per += bi * ext_weight[i]
    return per


def enumerate_geometric(g: ScalarField, h: float, energy, budget: EnumerationBudget,
                        t: float = 0.0) -> EnumerationResult:
    """Exact minimization of perimeter + (1/h) integral of (g - t) over F.

    Every subset of the interior (non-halo) cells is evaluated, with the
    exterior fixed outside the set.  Returns the minimal and maximal
    minimizers and verifies the tied minimizers form a lattice.
    """
    spec = g.spec
    cells = _interior_cells(spec)
    n = cells.shape[0]
    if n > budget.max_cells:
        raise BudgetExceededError("interior has %d cells, budget %d" % (n, budget.max_cells))
    t_start = time.monotonic()
    subsets = np.arange(1 << n, dtype=np.uint64)

    if isinstance(energy, OscEnergyParams):
        per = _osc_perimeters(spec, energy, cells, subsets)
    elif isinstance(energy, FracEnergyParams):
        per = _frac_perimeters(spec, energy, cells, subsets)
    else:
        raise TypeError("enumeration supports the plain energies only")

    bulkw = np.array([(g.values[tuple(c)] - t) * spec.cell_volume / h for c in cells])
    bulk = np.zeros(subsets.shape[0])
    for i in range(n):
        bulk += ((subsets >> np.uint64(i)) & np.uint64(1)) * bulkw[i]
    if time.monotonic() - t_start > budget.timeout:
        raise BudgetExceededError("enumeration timed out")

    total = per + bulk
    mn = float(total.min())
    ties = np.flatnonzero(total <= mn + 1e-12)

    def to_mask(bits) -> SetMask:
        m = np.zeros(spec.dims, dtype=bool)
        for i in range(n):
            if (int(bits) >> i) & 1:
                m[tuple(cells[i])] = True
        return SetMask(spec, m)

    inter = (1 << n) - 1
    union = 0
    for b in ties:
        inter &= int(b)
        union |= int(b)
    tied = [to_mask(int(b)) for b in ties[:64]]
    closed = True
    if len(ties) <= 64:
        tie_set = set(int(b) for b in ties)
        for x in tie_set:
            for y in tie_set:
                if (x | y) not in tie_set or (x & y) not in tie_set:
                    closed = False
    return EnumerationResult(mn, to_mask(inter), to_mask(union),
                             len(ties), tied, closed)


def _objective_and_subgradient(p: RofProblem, u: np.ndarray, free: np.ndarray):
    """Value and one subgradient of the step objective, per-cell units."""
    spec = p.g.spec
    g = p.g.values
    val = 0.0
    grad = (u - g) / p.h
    if isinstance(p.energy, OscEnergyParams):
        st = p.energy.stencil
        reach = st.reach
        scale = 1.0 / (2.0 * p.energy.r)
        ranges = [range(reach[i], spec.dims[i] - reach[i]) for i in range(spec.ndim)]
        for w in itertools.product(*ranges):
            best_hi = -math.inf
            best_lo = math.inf
            hi_cell = lo_cell = None
            for off in st.offsets:
                cell = tuple(int(w[i] + off[i]) for i in range(spec.ndim))
                v = u[cell]
                if v > best_hi:
                    best_hi = v
                    hi_cell = cell
                if v < best_lo:
                    best_lo = v
                    lo_cell = cell
            val += scale * (best_hi - best_lo)
            grad[hi_cell] += scale
            grad[lo_cell] -= scale
    elif isinstance(p.energy, FracEnergyParams):
        fp = p.energy
        cv = spec.cell_volume
        for off, k in zip(fp.half_offsets, fp.half_kernel):
            src = tuple(slice(max(0, -int(o)), min(n, n - int(o)))
                        for o, n in zip(off, spec.dims))
            dst = tuple(slice(max(0, int(o)), min(n, n + int(o)))
                        for o, n in zip(off, spec.dims))
            diff = u[src] - u[dst]
            val += k * cv * float(np.abs(diff).sum())
            sgn = np.sign(diff) * (k * cv)
            grad[src] += sgn
            grad[dst] -= sgn
    else:
        raise TypeError("subgradient oracle supports the plain energies only")
    val += 0.5 / p.h * float(((u - g)[free] ** 2).sum())
    return val, grad


def subgradient_rof(p: RofProblem, iters: int = 20000, step0: float | None = None):
    """Projected subgradient descent with diminishing steps 1/sqrt(k).

    Starts from the datum, keeps halo cells pinned, and returns the best
    objective seen (physical units) with its iterate.  This is a slow
    reference method; expect roughly first-digit to three-digit accuracy
    depending on the iteration budget.
    """
    spec = p.g.spec
    free = ~halo_band(spec).member
    u = p.g.values.copy()
    best = math.inf
    best_u = u.copy()
    if step0 is None:
        step0 = 0.5 * p.h
    for k in range(1, iters + 1):
        val, grad = _objective_and_subgradient(p, u, free)
        if val < best:
            best = val
            best_u = u.copy()
        u = u - (step0 / math.sqrt(k)) * grad
        u[~free] = p.g.values[~free]
    val, _ = _objective_and_subgradient(p, u, free)
    if val < best:
        best = val
        best_u = u.copy()
    return best * spec.cell_volume, ScalarField(spec, best_u)


def exact_rof(p: RofProblem, solver: str | None = None):
    """High-accuracy reference solve through a disciplined convex model.

    Used where spot checks need more digits than the subgradient method
    can certify; the model is assembled from the energy definitions
    directly and solved by an interior-point method.
    """
    import cvxpy as cp

    spec = p.g.spec
    free = ~halo_band(spec).member
    g = p.g.values
    u = cp.Variable(spec.dims)
    constraints = [u[~free] == g[~free]] if (~free).any() else []
    cv = spec.cell_volume
    if isinstance(p.energy, OscEnergyParams):
        st = p.energy.stencil
        reach = st.reach
        ranges = [range(reach[i], spec.dims[i] - reach[i]) for i in range(spec.ndim)]
        windows = list(itertools.product(*ranges))
        terms = []
        for w in windows:
            vals = cp.hstack([u[tuple(int(w[i] + o[i]) for i in range(spec.ndim))]
                              for o in st.offsets])
            terms.append(cp.max(vals) - cp.min(vals))
        jterm = cv / (2.0 * p.energy.r) * cp.sum(cp.hstack(terms))
    elif isinstance(p.energy, FracEnergyParams):
        fp = p.energy
        pieces = []
        for off, k in zip(fp.half_offsets, fp.half_kernel):
            src = tuple(slice(max(0, -int(o)), min(n, n - int(o)))
                        for o, n in zip(off, spec.dims))
            dst = tuple(slice(max(0, int(o)), min(n, n + int(o)))
                        for o, n in zip(off, spec.dims))
            pieces.append(k * cp.sum(cp.abs(u[src] - u[dst])))
        jterm = cv * cv * cp.sum(cp.hstack(pieces))
    else:
        raise TypeError("exact oracle supports the plain energies only")
    fid = cv / (2.0 * p.h) * cp.sum_squares(u[free] - g[free])
    problem = cp.Problem(cp.Minimize(jterm + fid), constraints)
    kwargs = {"solver": solver} if solver else {}
    problem.solve(**kwargs)
    if problem.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError("reference solve failed: %s" % problem.status)
    return float(problem.value), ScalarField(spec, np.asarray(u.value))


def brute_window(u: ScalarField, st: BallStencil, w):
    """Exhaustive window scan mirroring the fast extrema lookup.

    Ties resolve closest-offset-first then lexicographic, matching the
    fast path's determinism contract.
    """
    w = tuple(int(i) for i in w)
    entries = []
    for off in st.offsets:
        cell = tuple(w[i] + int(off[i]) for i in range(u.spec.ndim))
        if any(c < 0 or c >= u.spec.dims[i] for i, c in enumerate(cell)):
            raise IndexError("window out of bounds")
        off_t = tuple(int(o) for o in off)
        key = (sum(o * o for o in off_t), off_t)
        entries.append((float(u.values[cell]), key, off_t))
    lo = min(entries, key=lambda e: (e[0], e[1]))
    hi = min(entries, key=lambda e: (-e[0], e[1]))
    return lo[0], hi[0], lo[2], hi[2]


def brute_distance(E: SetMask, calibration: float | None = None) -> ScalarField:
    """O(n^2) signed distance over all opposite-phase cell pairs."""
    spec = E.spec
    if calibration is None:
        calibration = spec.dx / 2.0
    diag = math.sqrt(sum((n * spec.dx) ** 2 for n in spec.dims))
    if E.is_empty:
        return ScalarField.full(spec, diag)
    if E.is_full:
        return ScalarField.full(spec, -diag)
    cells = np.argwhere(np.ones(spec.dims, dtype=bool)).astype(float)
    inside = E.member.ravel()
    pts = cells * spec.dx
    d = np.empty(pts.shape[0])
    in_pts = pts[inside]
    out_pts = pts[~inside]
    for i in range(pts.shape[0]):
        if inside[i]:
            dist = np.sqrt(((out_pts - pts[i]) ** 2).sum(axis=1)).min()
            d[i] = -(dist - calibration)
        else:
            dist = np.sqrt(((in_pts - pts[i]) ** 2).sum(axis=1)).min()
            d[i] = dist - calibration
    return ScalarField(spec, d.reshape(spec.dims))


def brute_pairsum(u: ScalarField, p: FracEnergyParams) -> float:
    """O(n^2) pair sum mirroring the fractional total variation."""
    spec = u.spec
    cells = np.argwhere(np.ones(spec.dims, dtype=bool)).astype(float) * spec.dx
    vals = u.values.ravel()
    total = 0.0
    n = cells.shape[0]
    for i in range(n):
        d = cells[i + 1:] - cells[i]
        dist = np.sqrt((d * d).sum(axis=1))
        keep = (dist > 0) & (dist <= p.cutoff + 1e-12 * p.cutoff)
        if keep.any():
            k = p.c_s / dist[keep] ** (spec.ndim + p.s)
            total += float((k * np.abs(vals[i + 1:][keep] - vals[i])).sum())
    return total * spec.cell_volume ** 2
