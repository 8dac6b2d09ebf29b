import math

import numpy as np
import pytest
from scipy.integrate import quad

from nlflow.curvature import (
    DiskProbe,
    EllipseProbe,
    HalfSpaceProbe,
    ball_constant,
    frac_curvature,
    minkowski_curvature,
)
from nlflow.frac_energy import FracEnergyParams, cs_constant
from nlflow.grid import GridSpec, SetMask


def radial_ball_curvature_2d(s: float) -> float:
    """Independent radial quadrature of the unit-disk value."""
    c_s = cs_constant(2, s)
    body, _ = quad(lambda rho: rho ** (-1.0 - s) * 4.0 * math.asin(rho / 2.0),
                   0.0, 2.0, limit=200)
    return c_s * (body + 2.0 * math.pi * 2.0 ** (-s) / s)


class TestMinkowski:
    def test_circle_equals_inverse_radius(self):
        pr = DiskProbe(10.0)
        res = minkowski_curvature(pr, pr.boundary_point(), 3.0)
        assert res.value == pytest.approx(0.1, rel=1e-12)
        assert res.branch_report["plus"]["alive"]
        assert res.branch_report["minus"]["alive"]

    def test_half_space_zero(self):
        hs = HalfSpaceProbe([0.6, 0.8])
        x = hs.boundary_point()
        res = minkowski_curvature(hs, x, 2.0)
        assert res.value == 0.0

    def test_small_circle_single_branch(self):
        pr = DiskProbe(2.0)
        res = minkowski_curvature(pr, pr.boundary_point(), 3.0)
        assert not res.branch_report["minus"]["alive"]
        assert res.value == pytest.approx((1.0 + 3.0 / 2.0) / 6.0, rel=1e-12)

    def test_degenerate_radius_flag(self):
        pr = DiskProbe(3.0)
        res = minkowski_curvature(pr, pr.boundary_point(), 3.0)
        assert res.flag == "degenerate radius"

    def test_sphere(self):
        pr = DiskProbe(8.0, ndim=3)
        res = minkowski_curvature(pr, pr.boundary_point(), 2.0)
        expect = ((1 + 2 / 8) ** 2 - (1 - 2 / 8) ** 2) / 4.0
        assert res.value == pytest.approx(expect, rel=1e-12)

    def test_ellipse_matches_classical_for_small_r(self):
        el = EllipseProbe(8.0, 5.0)
        x = el.boundary_point(0.7)
        res = minkowski_curvature(el, x, 0.05)
        kappa = el.principal_curvatures(x)[0]
        assert res.value == pytest.approx(kappa, rel=1e-3)

    def test_not_on_boundary(self):
        pr = DiskProbe(5.0)
        with pytest.raises(ValueError):
            minkowski_curvature(pr, [1.0, 1.0], 2.0)


class TestFracCurvature:
    def test_half_space_exact_zero(self):
        spec = GridSpec((8, 8), 0.25, 0)
        p = FracEnergyParams.create(spec, 0.5, 4.0)
        for normal in ([1.0, 0.0], [1.0, 1.0], [0.3, -0.9]):
            hs = HalfSpaceProbe(normal)
            assert frac_curvature(hs, [0.0, 0.0], p).value == 0.0

    def test_disk_matches_radial_quadrature(self):
        spec = GridSpec((8, 8), 0.5, 0)
        p = FracEnergyParams.create(spec, 0.5, 8.0)
        pr = DiskProbe(16.0)
        val = frac_curvature(pr, pr.boundary_point(), p).value
        ref = radial_ball_curvature_2d(0.5) * 16.0 ** -0.5
        assert val == pytest.approx(ref, rel=0.05)

    def test_scaling_ratio(self):
        spec = GridSpec((8, 8), 0.5, 0)
        p = FracEnergyParams.create(spec, 0.5, 4.0)
        k1 = frac_curvature(DiskProbe(6.0), DiskProbe(6.0).boundary_point(), p).value
        k2 = frac_curvature(DiskProbe(12.0), DiskProbe(12.0).boundary_point(), p).value
        assert k1 / k2 == pytest.approx(2.0 ** 0.5, rel=0.03)

    def test_mask_monotone_under_inclusion(self):
        # discrete exactness: growing the set can only lower the value
        spec = GridSpec((32, 32), 1.0, 0)
        p = FracEnergyParams.create(spec, 0.5, 6.0)
        coords = spec.cell_centers()
        small = SetMask(spec, coords[0] ** 2 + coords[1] ** 2 <= 6.0 ** 2)
        grown = SetMask(spec, small.member | (np.abs(coords[0] + 8) + np.abs(coords[1]) <= 4))
        x = (int(15.5 + 6), 16)
        k_small = frac_curvature(small, x, p).value
        k_grown = frac_curvature(grown, x, p).value
        assert k_small >= k_grown - 1e-12

    def test_mask_equals_direct_sum(self):
        spec = GridSpec((24, 24), 1.0, 0)
        p = FracEnergyParams.create(spec, 0.5, 6.0)
        coords = spec.cell_centers()
        e = SetMask(spec, coords[0] ** 2 + coords[1] ** 2 <= 5.0 ** 2)
        x = (int(11.5 + 5), 12)
        res = frac_curvature(e, x, p)
        # direct evaluation of the paired sum
        total = 0.0
        for off, k in zip(p.offsets, p.kernel):
            cell = (x[0] + int(off[0]), x[1] + int(off[1]))
            total += k * (1.0 if not e.member[cell] else -1.0)
        assert res.value == pytest.approx(total * spec.cell_volume, rel=1e-12)

    def test_mask_requires_boundary(self):
        spec = GridSpec((24, 24), 1.0, 0)
        p = FracEnergyParams.create(spec, 0.5, 4.0)
        e = SetMask(spec, np.zeros(spec.dims, dtype=bool))
        e.member[12, 12] = True
        with pytest.raises(ValueError):
            frac_curvature(e, (4, 4), p)


class TestBallConstant:
    def test_2d_reference(self):
        assert ball_constant(2, 0.5) == pytest.approx(radial_ball_curvature_2d(0.5), rel=1e-6)

    def test_3d_closed_form(self):
        # exact angular geometry gives 2^(2-s)/s in three dimensions
        for s in (0.3, 0.5, 0.7):
            assert ball_constant(3, s) == pytest.approx(2.0 ** (2.0 - s) / s, rel=1e-9)

    def test_normalization_and_self_consistency(self):
        C = ball_constant(2, 0.5)
        spec = GridSpec((8, 8), 0.25, 0)
        p = FracEnergyParams.create(spec, 0.5, 4.0)
        for R in (2.0, 4.0):
            pr = DiskProbe(R)
            val = frac_curvature(pr, pr.boundary_point(), p).value
            assert val == pytest.approx(C * R ** -0.5, rel=0.03)
