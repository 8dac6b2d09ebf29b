"""Windowed oscillation energies, their marginal duals and nonlocal divergence.

The energy of a field is ``cell_volume/(2r)`` times the sum over all
grid-contained windows of the window's max minus min.  Its dual objects
keep, per window, two nonnegative weight vectors over the stencil offsets
(the two marginals of a pair weighting) with a common total mass at most
one; the pairing and the divergence depend on nothing finer than these
marginals, so nothing finer is stored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BoundaryTouchError, HaloError
from .grid import (
    BallStencil,
    GridSpec,
    ScalarField,
    SetMask,
    ball_offsets,
    fitting_windows,
)


@dataclass(frozen=True)
class OscEnergyParams:
    """Interaction radius, its stencil, and the cell volume of the grid."""

    r: float
    stencil: BallStencil
    cell_volume: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("interaction radius must be positive")
        if abs(self.stencil.radius - self.r) > 1e-12 * max(1.0, self.r):
            raise ValueError("stencil radius does not match r")

    @classmethod
    def create(cls, spec: GridSpec, r: float) -> "OscEnergyParams":
        return cls(r=float(r), stencil=ball_offsets(spec, r), cell_volume=spec.cell_volume)


@dataclass(frozen=True)
class WeightedOscParams:
    """Quadrature of oscillation energies over several radii.

    ``weights[i]`` multiplies the full energy at ``radii[i]`` (each term
    carries its own 1/(2 s_i) factor), approximating a radial profile by a
    user-supplied quadrature rule.
    """

    radii: tuple
    weights: tuple
    parts: tuple  # per-radius OscEnergyParams

    @classmethod
    def create(cls, spec: GridSpec, radii, weights) -> "WeightedOscParams":
        radii = tuple(float(s) for s in radii)
        weights = tuple(float(w) for w in weights)
        if len(radii) != len(weights) or not radii:
            raise ValueError("radii and weights must be equal-length and nonempty")
        if any(w < 0 for w in weights):
            raise ValueError("weights must be nonnegative")
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ValueError("radii must be strictly increasing")
        parts = tuple(OscEnergyParams.create(spec, s) for s in radii)
        return cls(radii=radii, weights=weights, parts=parts)


@dataclass
class OscDual:
    """Per-window marginal weight pair over the stencil offsets.

    ``a`` and ``b`` have shape (W, S) for the canonical row-major list of
    grid-contained windows; feasibility is ``a, b >= 0`` with equal row
    sums bounded by one.
    """

    spec: GridSpec
    stencil: BallStencil
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        centers, _ = fitting_windows(self.spec, self.stencil)
        shape = (centers.shape[0], self.stencil.size)
        self.a = np.ascontiguousarray(self.a, dtype=np.float64).reshape(shape)
        self.b = np.ascontiguousarray(self.b, dtype=np.float64).reshape(shape)

    @classmethod
    def zeros(cls, spec: GridSpec, stencil: BallStencil) -> "OscDual":
        centers, _ = fitting_windows(spec, stencil)
        w = centers.shape[0]
        return cls(spec, stencil,
                   np.zeros((w, stencil.size)), np.zeros((w, stencil.size)))

    @property
    def common_mass(self) -> np.ndarray:
        return self.a.sum(axis=1)

    def feasibility_violation(self) -> float:
        """Largest violation of a,b >= 0, sum a = sum b and mass <= 1."""
        neg = max(0.0, float(-min(self.a.min(initial=0.0), self.b.min(initial=0.0))))
        sa = self.a.sum(axis=1)
        sb = self.b.sum(axis=1)
        imbalance = float(np.abs(sa - sb).max(initial=0.0))
        excess = float(np.maximum(sa - 1.0, 0.0).max(initial=0.0))
        return max(neg, imbalance, excess)


def _require_halo(spec: GridSpec, stencil: BallStencil):
    reach = max(stencil.reach) if stencil.size else 0
    if reach + 1 > spec.halo:
        raise HaloError("insufficient halo for radius %g" % stencil.radius)


def _window_osc(u: ScalarField, p: OscEnergyParams) -> np.ndarray:
    _, gather = fitting_windows(u.spec, p.stencil)
    vals = u.values.ravel()[gather]
    return vals.max(axis=1) - vals.min(axis=1)


def jr_value(u: ScalarField, p: OscEnergyParams) -> float:
    """Oscillation total variation at radius r (physical units)."""
    _require_halo(u.spec, p.stencil)
    return p.cell_volume / (2.0 * p.r) * float(_window_osc(u, p).sum())


def perimeter_osc(E: SetMask, p: OscEnergyParams) -> float:
    """Oscillation perimeter: cell_volume/(2r) times the mixed-window count."""
    _require_halo(E.spec, p.stencil)
    if E.is_empty or E.is_full:
        return 0.0
    if E.touches_halo():
        raise BoundaryTouchError("set touches computational boundary")
    _, gather = fitting_windows(E.spec, p.stencil)
    vals = E.member.ravel()[gather]
    mixed = vals.any(axis=1) & ~vals.all(axis=1)
    return p.cell_volume / (2.0 * p.r) * float(mixed.sum())


def jf_value(u: ScalarField, wp: WeightedOscParams) -> float:
    """Weighted multi-radius oscillation energy."""
    return float(sum(w * jr_value(u, part) for w, part in zip(wp.weights, wp.parts)))


def osc_divergence(z: OscDual, p: OscEnergyParams) -> ScalarField:
    """Nonlocal divergence of a marginal dual, as a per-cell field.

    Defined through the pairing adjoint: summing ``D * phi * cell_volume``
    over cells reproduces minus the (1/2r)-scaled window pairing of ``z``
    against ``phi`` for any field ``phi``.
    """
    _, gather = fitting_windows(z.spec, z.stencil)
    n = z.spec.n_cells
    flow = np.bincount(gather.ravel(), weights=(z.a - z.b).ravel(), minlength=n)
    d = -flow / (2.0 * p.r)
    return ScalarField(z.spec, d.reshape(z.spec.dims))


def osc_pairing(z: OscDual, u: ScalarField, p: OscEnergyParams) -> float:
    """(cell_volume/2r) * sum_w <a_w - b_w, u(w + offsets)>."""
    _, gather = fitting_windows(z.spec, z.stencil)
    vals = u.values.ravel()[gather]
    return p.cell_volume / (2.0 * p.r) * float(((z.a - z.b) * vals).sum())


@dataclass
class OscCertificateReport:
    """Complementarity and feasibility diagnostics for a window dual."""

    max_abs_slack_mass1: float
    mass_deficient_count: int
    feasibility_violation: float
    worst_windows: list
    windows: int
    ok: bool


def dual_certificate_check(u: ScalarField, z: OscDual, p: OscEnergyParams,
                           tol: float) -> OscCertificateReport:
    """Check that ``z`` attains the per-window oscillation of ``u``.

    On every window whose common mass is (numerically) one, the pairing
    must equal the oscillation within ``tol``; windows with oscillation
    above ``tol`` but mass visibly below one are reported as deficient.
    """
    _, gather = fitting_windows(u.spec, z.stencil)
    vals = u.values.ravel()[gather]
    osc = vals.max(axis=1) - vals.min(axis=1)
    pair = (z.a * vals).sum(axis=1) - (z.b * vals).sum(axis=1)
    slack = osc - pair
    mass = z.common_mass
    feas = z.feasibility_violation()

    full_mass = mass >= 1.0 - tol
    max_slack = float(np.abs(slack[full_mass]).max(initial=0.0))
    deficient = (osc > tol) & ~full_mass
    n_def = int(deficient.sum())

    score = np.where(full_mass, np.abs(slack), 0.0) + np.where(deficient, slack, 0.0)
    order = np.argsort(score)[::-1][:3]
    worst = [(int(i), float(slack[i]), float(mass[i]), float(osc[i]))
             for i in order if score[i] > 0]

    ok = feas <= 1e-9 and max_slack <= tol and n_def == 0
    return OscCertificateReport(max_slack, n_def, feas, worst, osc.shape[0], ok)


def _project_simplex_rows(v: np.ndarray, z: float = 1.0) -> np.ndarray:
    """Row-wise Euclidean projection onto {x >= 0, sum x = z}."""
    s = np.sort(v, axis=1)[:, ::-1]
    cssv = np.cumsum(s, axis=1) - z
    ind = np.arange(1, v.shape[1] + 1)
    cond = s - cssv / ind > 0
    rho = np.count_nonzero(cond, axis=1)
    theta = cssv[np.arange(v.shape[0]), rho - 1] / rho
    return np.maximum(v - theta[:, None], 0.0)


def project_pair_batch_reference(a: np.ndarray, b: np.ndarray):
    """Exact row-wise projection onto {a,b >= 0, sum a = sum b <= 1}.

    The unconstrained-mass optimum shifts ``a`` down and ``b`` up by a
    common scalar t solving sum (a-t)+ = sum (b+t)+, found exactly on the
    sorted breakpoints; rows whose balanced mass exceeds one fall back to
    independent unit-simplex projections.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w, s = a.shape
    vals = np.concatenate([a, -b], axis=1)  # breakpoints of the balance function
    order = np.argsort(vals, axis=1)
    sv = np.take_along_axis(vals, order, axis=1)
    is_a = (order < s).astype(np.float64)

    cum_av = np.cumsum(sv * is_a, axis=1)
    cum_ac = np.cumsum(is_a, axis=1)
    cum_bv = np.cumsum(sv * (1.0 - is_a), axis=1)
    cum_bc = np.cumsum(1.0 - is_a, axis=1)
    tot_av = cum_av[:, -1][:, None]

    # balance at each breakpoint: supply from a-entries above, demand from
    # b-entries below; entries equal to the breakpoint contribute zero
    sa = tot_av - cum_av
    ka = float(s) - cum_ac
    kb = cum_bc
    sb = cum_bv
    phi = sa - (ka + kb) * sv + sb

    q = (phi >= 0).sum(axis=1)  # number of breakpoints left of the root
    rows = np.arange(w)
    sa_q = np.where(q > 0, sa[rows, np.maximum(q - 1, 0)], tot_av[:, 0])
    ka_q = np.where(q > 0, ka[rows, np.maximum(q - 1, 0)], float(s))
    sb_q = np.where(q > 0, sb[rows, np.maximum(q - 1, 0)], 0.0)
    kb_q = np.where(q > 0, kb[rows, np.maximum(q - 1, 0)], 0.0)
    denom = ka_q + kb_q
    t = np.where(denom > 0, (sa_q + sb_q) / np.maximum(denom, 1.0),
                 sv[rows, np.maximum(q - 1, 0)])

    pa = np.maximum(a - t[:, None], 0.0)
    pb = np.maximum(b + t[:, None], 0.0)

    over = pa.sum(axis=1) > 1.0
    if np.any(over):
        pa[over] = _project_simplex_rows(a[over])
        pb[over] = _project_simplex_rows(b[over])
    return pa, pb


try:
    from numba import njit as _njit

    @_njit(cache=True)
    def _pair_walk_jit(a, b, sort_a, sort_nb):  # pragma: no cover - via wrapper
        w, s = a.shape
        out_a = np.empty_like(a)
        out_b = np.empty_like(b)
        for row in range(w):
            tot_a = 0.0
            for i in range(s):
                tot_a += a[row, i]
            # merge-walk the sorted breakpoints ascending, tracking the
            # balance phi(t) = sum (a-t)+ - sum (b+t)+ until it turns negative
            sa = tot_a
            ka = float(s)
            sb = 0.0
            kb = 0.0
            sa_p = sa
            ka_p = ka
            sb_p = sb
            kb_p = kb
            c_prev = 0.0
            ia = 0
            ib = 0
            t = 0.0
            found = False
            for _ in range(2 * s):
                take_a = ib >= s or (ia < s and sort_a[row, ia] <= sort_nb[row, ib])
                if take_a:
                    c = sort_a[row, ia]
                    ia += 1
                    sa -= c
                    ka -= 1.0
                else:
                    c = sort_nb[row, ib]
                    ib += 1
                    sb += c
                    kb += 1.0
                phi = sa - (ka + kb) * c + sb
                if phi < 0.0:
                    denom = ka_p + kb_p
                    if denom > 0.0:
                        t = (sa_p + sb_p) / denom
                    else:
                        t = c_prev
                    found = True
                    break
                sa_p = sa
                ka_p = ka
                sb_p = sb
                kb_p = kb
                c_prev = c
            if not found:
                t = sb_p / kb_p  # all supply exhausted: balance the b side
            mass = 0.0
            for i in range(s):
                va = a[row, i] - t
                if va < 0.0:
                    va = 0.0
                out_a[row, i] = va
                mass += va
            if mass <= 1.0:
                for i in range(s):
                    vb = b[row, i] + t
                    out_b[row, i] = vb if vb > 0.0 else 0.0
            else:
                # mass cap active: two independent unit-simplex projections,
                # using the sorted buffers (sort_a asc, sort_nb = sorted(-b))
                for half in range(2):
                    cssv = 0.0
                    theta = 0.0
                    for i in range(s):
                        if half == 0:
                            vi = sort_a[row, s - 1 - i]  # i-th largest of a
                        else:
                            vi = -sort_nb[row, i]        # i-th largest of b
                        cssv += vi
                        if vi - (cssv - 1.0) / (i + 1.0) > 0.0:
                            theta = (cssv - 1.0) / (i + 1.0)
                    if half == 0:
                        for i in range(s):
                            vv = a[row, i] - theta
                            out_a[row, i] = vv if vv > 0.0 else 0.0
                    else:
                        for i in range(s):
                            vv = b[row, i] - theta
                            out_b[row, i] = vv if vv > 0.0 else 0.0
        return out_a, out_b

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


def project_pair_batch(a: np.ndarray, b: np.ndarray):
    """Row-wise projection onto {a,b >= 0, sum a = sum b <= 1} (fast path)."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if _HAVE_NUMBA:
        return _pair_walk_jit(a, b, np.sort(a, axis=1), np.sort(-b, axis=1))
    return project_pair_batch_reference(a, b)


def project_osc_dual(a, b):
    """Euclidean projection of one window's weights onto the feasible set."""
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("a and b must be 1-D arrays of equal length")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("weights must be finite")
    pa, pb = project_pair_batch_reference(a[None, :], b[None, :])
    return pa[0], pb[0]
