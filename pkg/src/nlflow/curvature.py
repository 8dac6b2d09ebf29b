"""Pointwise nonlocal curvature evaluators on analytic probes and masks.

The windowed-oscillation curvature of a smooth set combines two branches,
each a determinant of I +/- r times the shape operator, alive only when
the point at distance r along the normal actually realizes distance r to
the boundary.  The fractional curvature is a principal-value kernel sum,
realized discretely by pairing antipodal lattice offsets so that it
vanishes identically on half-spaces.

For analytic probes the pairing alone is not enough: lattice points in
the tangent directions sit on the convex side of a curved boundary at
every scale, which leaves an O(dx^-s) near-diagonal bias.  The probe
evaluator therefore excludes an inner disk of a few cells, replaces it
with the osculating-ball near field (an explicit integral of the kernel
against the leading angular imbalance, proportional to the sum of
principal curvatures), and adds the exact pure-exterior far field beyond
the quadrature radius.  Mask input keeps the plain truncated pairing and
reports the analytic tail bound instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from .frac_energy import FracEnergyParams, cs_constant, unit_sphere_area
from .grid import SetMask, _enumerate_ball


class DiskProbe:
    """Disk (2D) or ball (3D) of radius R, optionally off-center."""

    def __init__(self, radius: float, center=None, ndim: int = 2):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)
        self.ndim = ndim
        self.center = np.zeros(ndim) if center is None else np.asarray(center, dtype=float)

    def signed_level(self, pts):
        d = np.asarray(pts, dtype=float) - self.center
        return np.sqrt((d * d).sum(axis=-1)) - self.radius

    def contains(self, pts):
        return self.signed_level(pts) <= 0.0

    def distance_to_boundary(self, x):
        return abs(float(self.signed_level(np.asarray(x, dtype=float))))

    def normal(self, x):
        v = np.asarray(x, dtype=float) - self.center
        return v / np.linalg.norm(v)

    def principal_curvatures(self, x):
        return [1.0 / self.radius] * (self.ndim - 1)

    def boundary_point(self, direction=None):
        d = np.zeros(self.ndim)
        d[0] = 1.0
        if direction is not None:
            d = np.asarray(direction, dtype=float)
            d = d / np.linalg.norm(d)
        return self.center + self.radius * d

    def max_extent_from(self, x):
        return float(np.linalg.norm(np.asarray(x, dtype=float) - self.center)) + self.radius


class HalfSpaceProbe:
    """Half-space {n . x <= c} with unit outward normal n."""

    def __init__(self, normal, offset: float = 0.0):
        n = np.asarray(normal, dtype=float)
        self.n = n / np.linalg.norm(n)
        self.c = float(offset)
        self.ndim = n.shape[0]

    def signed_level(self, pts):
        return np.asarray(pts, dtype=float) @ self.n - self.c

    def contains(self, pts):
        return self.signed_level(pts) <= 0.0

    def distance_to_boundary(self, x):
        return abs(float(self.signed_level(np.asarray(x, dtype=float))))

    def normal(self, x):
        return self.n.copy()

    def principal_curvatures(self, x):
        return [0.0] * (self.ndim - 1)

    def boundary_point(self, direction=None):
        return self.c * self.n

    def max_extent_from(self, x):
        return math.inf


class EllipseProbe:
    """Ellipse x^2/a^2 + y^2/b^2 <= 1 (2D only)."""

    def __init__(self, a: float, b: float):
        if a <= 0 or b <= 0:
            raise ValueError("semi-axes must be positive")
        self.a = float(a)
        self.b = float(b)
        self.ndim = 2

    def signed_level(self, pts):
        # not a distance, but correctly signed; magnitudes come from _foot
        p = np.asarray(pts, dtype=float)
        return (p[..., 0] / self.a) ** 2 + (p[..., 1] / self.b) ** 2 - 1.0

    def contains(self, pts):
        return self.signed_level(pts) <= 0.0

    def _foot(self, x):
        x = np.asarray(x, dtype=float)

        def dist2(theta):
            dxv = x[0] - self.a * math.cos(theta)
            dyv = x[1] - self.b * math.sin(theta)
            return dxv * dxv + dyv * dyv

        thetas = np.linspace(0.0, 2.0 * math.pi, 720, endpoint=False)
        vals = [dist2(t) for t in thetas]
        t0 = thetas[int(np.argmin(vals))]
        res = minimize_scalar(dist2, bounds=(t0 - 0.02, t0 + 0.02), method="bounded",
                              options={"xatol": 1e-13})
        return float(res.x)

    def distance_to_boundary(self, x):
        t = self._foot(x)
        p = np.array([self.a * math.cos(t), self.b * math.sin(t)])
        return float(np.linalg.norm(np.asarray(x, dtype=float) - p))

    def normal(self, x):
        t = self._foot(x)
        n = np.array([math.cos(t) / self.a, math.sin(t) / self.b])
        return n / np.linalg.norm(n)

    def principal_curvatures(self, x):
        t = self._foot(x)
        denom = (self.a ** 2 * math.sin(t) ** 2 + self.b ** 2 * math.cos(t) ** 2) ** 1.5
        return [self.a * self.b / denom]

    def boundary_point(self, theta: float = 0.0):
        return np.array([self.a * math.cos(theta), self.b * math.sin(theta)])

    def max_extent_from(self, x):
        return float(np.linalg.norm(np.asarray(x, dtype=float))) + max(self.a, self.b)


SmoothSetProbe = DiskProbe | HalfSpaceProbe | EllipseProbe


@dataclass
class CurvatureResult:
    value: float
    branch_report: dict = field(default_factory=dict)
    flag: str | None = None
    error_estimate: float | None = None


def minkowski_curvature(probe: SmoothSetProbe, x, r: float,
                        boundary_tol: float = 1e-9,
                        dist_tol_factor: float = 1e-6) -> CurvatureResult:
    """Two-branch determinant curvature of the oscillation perimeter.

    Each branch is +/- det(I +/- r * shape operator)/(2r), kept only when
    the probe's distance function confirms dist(x +/- r nu, boundary) = r
    within ``dist_tol_factor * r``.  A branch flipping between r(1-e) and
    r(1+e) marks the degenerate radius and sets a flag.
    """
    x = np.asarray(x, dtype=float)
    if probe.distance_to_boundary(x) > boundary_tol * max(1.0, float(np.abs(x).max())):
        raise ValueError("x is not on the probe boundary")
    nu = probe.normal(x)
    kappas = probe.principal_curvatures(x)
    dist_tol = dist_tol_factor * r

    def branch_alive(sign, rr):
        return abs(probe.distance_to_boundary(x + sign * rr * nu) - rr) <= dist_tol

    report = {}
    total = 0.0
    flag = None
    for sign, name in ((+1.0, "plus"), (-1.0, "minus")):
        alive = branch_alive(sign, r)
        lo = branch_alive(sign, r * (1.0 - dist_tol_factor))
        hi = branch_alive(sign, r * (1.0 + dist_tol_factor))
        if lo != hi:
            flag = "degenerate radius"
        det = 1.0
        for k in kappas:
            det *= 1.0 + sign * r * k
        val = sign * det / (2.0 * r) if alive else 0.0
        report[name] = {"alive": alive, "value": val}
        total += val
    return CurvatureResult(value=total, branch_report=report, flag=flag)


def _half_offsets(offsets: np.ndarray, ndim: int) -> np.ndarray:
    pos = np.zeros(offsets.shape[0], dtype=bool)
    undecided = np.ones(offsets.shape[0], dtype=bool)
    for ax in range(ndim):
        col = offsets[:, ax]
        pos |= undecided & (col > 0)
        undecided &= col == 0
    return offsets[pos]


def _paired_kernel_sum(phase_sign, offsets, dx, ndim, s, c_s):
    """Antipodal-paired kernel sum of the phase sign (+1 out, -1 in, 0 on)."""
    half = _half_offsets(offsets, ndim)
    dist = np.sqrt((half.astype(float) ** 2).sum(axis=1)) * dx
    w = c_s / dist ** (ndim + s)
    vals = phase_sign(half) + phase_sign(-half)
    return float((w * vals).sum() * dx ** ndim)


def frac_curvature(target, x, p: FracEnergyParams,
                   inner_exclusion: float | None = None) -> CurvatureResult:
    """Principal-value fractional curvature at a boundary point.

    Mask input: truncated antipodal pairing over the params' kernel, tail
    bound reported as the error estimate.  Probe input: pairing outside an
    inner exclusion (by default scaled to sqrt(dx/curvature), where the
    lattice starts to resolve the tangent band), plus the analytic
    osculating near field and, for bounded probes, the exact pure-exterior
    far field; the reported estimate covers the staircase residual.
    """
    sigma = unit_sphere_area(p.ndim)
    if isinstance(target, SetMask):
        spec = target.spec
        xi = tuple(int(i) for i in x)
        member = target.member
        phase = member[xi]
        on_boundary = False
        for ax in range(spec.ndim):
            for dlt in (-1, 1):
                nb = list(xi)
                nb[ax] += dlt
                if 0 <= nb[ax] < spec.dims[ax] and member[tuple(nb)] != phase:
                    on_boundary = True
        if not on_boundary:
            raise ValueError("not a boundary probe")
        reach = p.reach
        for ax in range(spec.ndim):
            if xi[ax] - reach < 0 or xi[ax] + reach >= spec.dims[ax]:
                raise ValueError("quadrature radius does not fit the grid at x")

        def phase_sign(offs):
            cells = np.asarray(xi, dtype=np.int64)[None, :] + offs
            inside = member[tuple(cells.T)]
            return np.where(inside, -1.0, 1.0)

        val = _paired_kernel_sum(phase_sign, p.offsets, p.dx, p.ndim, p.s, p.c_s)
        tail = p.c_s * sigma * p.cutoff ** (-p.s) / p.s
        return CurvatureResult(value=val, error_estimate=tail)

    probe = target
    x = np.asarray(x, dtype=float)
    if probe.distance_to_boundary(x) > 1e-9 * max(1.0, float(np.abs(x).max())):
        raise ValueError("not a boundary probe")
    extent = probe.max_extent_from(x)
    cut = p.cutoff if not math.isfinite(extent) else max(p.cutoff, extent + 2.0 * p.dx)
    kappas = probe.principal_curvatures(x)
    ksum = float(sum(kappas))
    kmax = float(max((abs(k) for k in kappas), default=0.0))
    if inner_exclusion is None:
        delta = 2.0 * p.dx
        if kmax > 0.0:
            delta = max(delta, 2.0 * math.sqrt(p.dx / kmax))
            delta = min(delta, 0.5 / kmax)
        delta = min(delta, 0.5 * cut)
        delta = max(delta, 2.0 * p.dx)
    else:
        delta = float(inner_exclusion)
    offsets = _enumerate_ball(p.ndim, p.dx, cut)
    d2 = (offsets.astype(float) ** 2).sum(axis=1) * p.dx ** 2
    offsets = offsets[d2 > delta * delta]

    def phase_sign(offs):
        pts = x[None, :] + offs.astype(float) * p.dx
        return np.sign(probe.signed_level(pts))

    val = _paired_kernel_sum(phase_sign, offsets, p.dx, p.ndim, p.s, p.c_s)

    # osculating near field on the excluded disk: the leading angular
    # imbalance is (2 in 2D, pi in 3D) * sum(kappa_i) * rho per shell
    angular = 2.0 if p.ndim == 2 else math.pi
    near = p.c_s * angular * ksum * delta ** (1.0 - p.s) / (1.0 - p.s)
    val += near

    tail = p.c_s * sigma * cut ** (-p.s) / p.s
    if math.isfinite(extent):
        val += tail  # beyond the quadrature radius everything is exterior
        err = abs(near) * 0.5 + p.c_s * p.dx / max(delta, p.dx)
    else:
        # antipodal pairing cancels the half-space far field exactly
        err = tail
    return CurvatureResult(value=val, error_estimate=err)


_BALL_CONSTANT_CACHE: dict = {}


def _ball_shell_imbalance(rho: float, ndim: int) -> float:
    """Angular measure of exterior minus interior on the shell |y-x| = rho
    around a boundary point of the unit ball."""
    if rho >= 2.0:
        return unit_sphere_area(ndim)
    if ndim == 2:
        return 4.0 * math.asin(rho / 2.0)
    return 2.0 * math.pi * rho


def ball_constant(ndim: int, s: float, rtol: float = 0.01) -> float:
    """Unit-ball fractional curvature by radial principal-value quadrature.

    The angular imbalance on each shell around a boundary point is exact
    geometry; the radial integral is evaluated adaptively at two
    refinement levels which must agree to ``rtol``.  Values are cached.
    """
    key = (ndim, round(s, 12))
    hit = _BALL_CONSTANT_CACHE.get(key)
    if hit is not None:
        return hit
    c_s = cs_constant(ndim, s)

    def integrand(rho):
        return rho ** (ndim - 1 - ndim - s) * _ball_shell_imbalance(rho, ndim)

    tail = unit_sphere_area(ndim) * 2.0 ** (-s) / s
    trace = []
    prev = None
    for limit in (40, 200):
        body, _ = quad(integrand, 0.0, 2.0, limit=limit, epsabs=1e-12, epsrel=1e-12)
        val = c_s * (body + tail)
        trace.append((limit, val))
        if prev is not None and abs(val - prev) <= rtol * abs(val):
            _BALL_CONSTANT_CACHE[key] = val
            return val
        prev = val
    raise RuntimeError("ball constant quadrature did not converge: %r" % (trace,))
