import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlflow.errors import BoundaryTouchError, HaloError
from nlflow.grid import GridSpec, ScalarField, SetMask, ball_offsets, fitting_windows
from nlflow.osc_energy import (
    OscDual,
    OscEnergyParams,
    WeightedOscParams,
    dual_certificate_check,
    jf_value,
    jr_value,
    osc_divergence,
    osc_pairing,
    perimeter_osc,
    project_osc_dual,
    project_pair_batch,
    project_pair_batch_reference,
)

from conftest import quantize_levels, splitmix_field


@pytest.fixture
def params16(spec16):
    return OscEnergyParams.create(spec16, 1.5)


def direct_jr(u, p):
    """Double-loop evaluation over every window and offset."""
    spec = u.spec
    reach = p.stencil.reach
    total = 0.0
    ranges = [range(reach[i], spec.dims[i] - reach[i]) for i in range(spec.ndim)]
    for w in itertools.product(*ranges):
        vals = [u.values[tuple(w[i] + int(o[i]) for i in range(spec.ndim))]
                for o in p.stencil.offsets]
        total += max(vals) - min(vals)
    return spec.cell_volume / (2.0 * p.r) * total


class TestJrValue:
    def test_constant_is_zero(self, spec16, params16):
        assert jr_value(ScalarField.full(spec16, 7.0), params16) == 0.0

    def test_positive_homogeneity(self, spec16, params16):
        u = splitmix_field(spec16, 3)
        assert jr_value(ScalarField(spec16, 4.0 * u.values), params16) == \
            pytest.approx(4.0 * jr_value(u, params16), rel=1e-12)

    def test_matches_double_loop(self):
        spec = GridSpec((8, 8), 1.0, 3)
        p = OscEnergyParams.create(spec, 1.5)
        u = splitmix_field(spec, 11)
        assert jr_value(u, p) == pytest.approx(direct_jr(u, p), rel=1e-13)

    def test_insufficient_halo(self):
        spec = GridSpec((16, 16), 1.0, 3)
        p = OscEnergyParams.create(spec, 2.0)
        small = GridSpec((16, 16), 1.0, 2)
        with pytest.raises(HaloError):
            jr_value(splitmix_field(small, 0), p)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), seed2=st.integers(0, 2 ** 31))
    def test_subadditivity_and_submodularity(self, seed, seed2):
        spec = GridSpec((12, 12), 1.0, 2)
        p = OscEnergyParams.create(spec, 1.0)
        u = splitmix_field(spec, seed)
        v = splitmix_field(spec, seed2)
        ju, jv = jr_value(u, p), jr_value(v, p)
        s = ScalarField(spec, u.values + v.values)
        assert jr_value(s, p) <= ju + jv + 1e-12
        mx = ScalarField(spec, np.maximum(u.values, v.values))
        mn = ScalarField(spec, np.minimum(u.values, v.values))
        assert jr_value(mx, p) + jr_value(mn, p) <= ju + jv + 1e-12

    def test_truncation(self, spec16, params16):
        u = splitmix_field(spec16, 5, -2.0, 2.0)
        t = ScalarField(spec16, np.clip(u.values, -0.5, 1.0))
        assert jr_value(t, params16) <= jr_value(u, params16) + 1e-12

    def test_translation_invariance(self):
        spec = GridSpec((20, 20), 1.0, 3)
        p = OscEnergyParams.create(spec, 1.5)
        base = np.zeros(spec.dims)
        base[6:10, 6:10] = splitmix_field(GridSpec((4, 4), 1.0, 0), 9).values
        shifted = np.roll(np.roll(base, 2, axis=0), 1, axis=1)
        assert jr_value(ScalarField(spec, base), p) == pytest.approx(
            jr_value(ScalarField(spec, shifted), p), rel=1e-13)

    def test_coarea_exact(self, spec16, params16):
        u = quantize_levels(splitmix_field(spec16, 21), 6)
        # pin the halo band at the top value so sublevels stay interior
        vals = u.values.copy()
        from nlflow.grid import halo_band

        vals[halo_band(spec16).member] = vals.max()
        u = ScalarField(spec16, vals)
        levels = np.unique(u.values)
        total = 0.0
        for t0, t1 in zip(levels, levels[1:]):
            e = SetMask(spec16, u.values <= t0)
            total += (t1 - t0) * perimeter_osc(e, params16)
        assert total == pytest.approx(jr_value(u, params16), rel=1e-12)


class TestPerimeter:
    def test_empty_and_full(self, spec16, params16):
        assert perimeter_osc(SetMask.empty(spec16), params16) == 0.0
        full = SetMask(spec16, np.ones(spec16.dims, dtype=bool))
        assert perimeter_osc(full, params16) == 0.0

    def test_disk_tubular_identity(self):
        # perimeter equals the distance-oracle mixed-window count exactly,
        # and the continuum circle length within discretization error
        from nlflow.oracle import brute_distance

        spec = GridSpec((32, 32), 1.0, 4)
        p = OscEnergyParams.create(spec, 3.0)
        coords = spec.cell_centers()
        e = SetMask(spec, coords[0] ** 2 + coords[1] ** 2 <= 8.0 ** 2)
        per = perimeter_osc(e, p)

        # a window at center c straddles the boundary iff its uncalibrated
        # distance to the opposite phase is at most r (it always sees its
        # own phase at the center)
        d = brute_distance(e, calibration=0.0).values
        centers, _ = fitting_windows(spec, p.stencil)
        mixed = sum(1 for c in centers
                    if abs(d[np.unravel_index(c, spec.dims)]) <= p.r + 1e-12)
        oracle = spec.cell_volume / (2 * p.r) * mixed
        assert per == pytest.approx(oracle, abs=1e-12)
        assert per == pytest.approx(2.0 * np.pi * 8.0, rel=0.10)

    def test_square_perimeter(self):
        spec = GridSpec((48, 48), 1.0, 3)
        p = OscEnergyParams.create(spec, 2.0)
        coords = spec.cell_centers()
        e = SetMask(spec, np.maximum(np.abs(coords[0]), np.abs(coords[1])) <= 8.0)
        # side L = 17 cells -> boundary length about 4L, corner terms O(r)
        assert perimeter_osc(e, p) == pytest.approx(4 * 17.0, rel=0.15)

    def test_halo_touch_rejected(self, spec16, params16):
        m = np.zeros(spec16.dims, dtype=bool)
        m[0, 0] = True
        with pytest.raises(BoundaryTouchError):
            perimeter_osc(SetMask(spec16, m), params16)


class TestWeighted:
    def test_degenerate_quadrature(self, spec16):
        u = splitmix_field(spec16, 13)
        wp = WeightedOscParams.create(spec16, [1.5], [1.0])
        p = OscEnergyParams.create(spec16, 1.5)
        assert jf_value(u, wp) == pytest.approx(jr_value(u, p), rel=1e-14)

    def test_two_radius_linearity(self, spec16):
        u = splitmix_field(spec16, 14)
        wp = WeightedOscParams.create(spec16, [1.0, 2.0], [0.3, 1.7])
        j1 = jr_value(u, OscEnergyParams.create(spec16, 1.0))
        j2 = jr_value(u, OscEnergyParams.create(spec16, 2.0))
        assert jf_value(u, wp) == pytest.approx(0.3 * j1 + 1.7 * j2, rel=1e-13)

    def test_constant_zero(self, spec16):
        wp = WeightedOscParams.create(spec16, [1.0, 2.0], [1.0, 1.0])
        assert jf_value(ScalarField.full(spec16, 3.0), wp) == 0.0

    def test_validation(self, spec16):
        with pytest.raises(ValueError):
            WeightedOscParams.create(spec16, [2.0, 1.0], [1.0, 1.0])
        with pytest.raises(ValueError):
            WeightedOscParams.create(spec16, [1.0], [-1.0])


class TestDivergence:
    def test_zero_dual(self, spec16, params16):
        z = OscDual.zeros(spec16, params16.stencil)
        assert np.all(osc_divergence(z, params16).values == 0.0)

    def test_annihilates_constants(self, spec16, params16):
        rng = np.random.default_rng(5)
        centers, _ = fitting_windows(spec16, params16.stencil)
        a, b = project_pair_batch(
            rng.random((centers.shape[0], params16.stencil.size)),
            rng.random((centers.shape[0], params16.stencil.size)))
        z = OscDual(spec16, params16.stencil, a, b)
        const = ScalarField.full(spec16, 3.7)
        pairing = osc_pairing(z, const, params16)
        assert pairing == pytest.approx(0.0, abs=1e-12)
        d = osc_divergence(z, params16)
        total = float((d.values * 3.7).sum()) * spec16.cell_volume
        assert total == pytest.approx(0.0, abs=1e-12)

    def test_divergence_is_pairing_adjoint(self, spec16, params16):
        rng = np.random.default_rng(6)
        centers, gather = fitting_windows(spec16, params16.stencil)
        a, b = project_pair_batch(
            rng.random((centers.shape[0], params16.stencil.size)),
            rng.random((centers.shape[0], params16.stencil.size)))
        z = OscDual(spec16, params16.stencil, a, b)
        phi = splitmix_field(spec16, 77)
        d = osc_divergence(z, params16)
        lhs = float((d.values * phi.values).sum()) * spec16.cell_volume
        # explicit double sum over windows and offsets
        vals = phi.values.ravel()[gather]
        rhs = -spec16.cell_volume / (2 * params16.r) * float(((a - b) * vals).sum())
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


class TestDualCertificate:
    def test_argmax_argmin_certificate_attains(self, spec16, params16):
        u = splitmix_field(spec16, 31)
        centers, gather = fitting_windows(spec16, params16.stencil)
        vals = u.values.ravel()[gather]
        a = np.zeros(vals.shape)
        b = np.zeros(vals.shape)
        rows = np.arange(vals.shape[0])
        a[rows, vals.argmax(axis=1)] = 1.0
        b[rows, vals.argmin(axis=1)] = 1.0
        z = OscDual(spec16, params16.stencil, a, b)
        assert osc_pairing(z, u, params16) == pytest.approx(
            jr_value(u, params16), rel=1e-13)
        rep = dual_certificate_check(u, z, params16, 1e-10)
        assert rep.ok
        assert rep.max_abs_slack_mass1 <= 1e-12

    def test_zero_dual_flagged(self, spec16, params16):
        u = splitmix_field(spec16, 32)
        z = OscDual.zeros(spec16, params16.stencil)
        rep = dual_certificate_check(u, z, params16, 1e-6)
        assert not rep.ok
        assert rep.mass_deficient_count > 0


def project_pair_oracle(a, b):
    """Tiny quadratic program by active-set enumeration (exact).

    For each choice of zero-clamped coordinates and mass-cap activity the
    stationarity system is linear; the feasible candidate with the least
    distance is the projection.
    """
    from itertools import product

    s = a.shape[0]
    best = None
    for za in product([0, 1], repeat=s):
        for zb in product([0, 1], repeat=s):
            for mass_active in (False, True):
                fa = [i for i in range(s) if not za[i]]
                fb = [i for i in range(s) if not zb[i]]
                na, nb = len(fa), len(fb)
                cand_a = np.zeros(s)
                cand_b = np.zeros(s)
                if na == 0 and nb == 0:
                    if mass_active:
                        continue
                elif na == 0 or nb == 0:
                    continue  # equal masses force both sides empty together
                elif mass_active:
                    cand_a[fa] = a[fa] - (a[fa].sum() - 1.0) / na
                    cand_b[fb] = b[fb] - (b[fb].sum() - 1.0) / nb
                else:
                    lam = (a[fa].sum() - b[fb].sum()) / (na + nb)
                    cand_a[fa] = a[fa] - lam
                    cand_b[fb] = b[fb] + lam
                if np.any(cand_a < -1e-12) or np.any(cand_b < -1e-12):
                    continue
                sa, sb = cand_a.sum(), cand_b.sum()
                if abs(sa - sb) > 1e-9 or sa > 1.0 + 1e-9:
                    continue
                val = ((cand_a - a) ** 2).sum() + ((cand_b - b) ** 2).sum()
                if best is None or val < best[0] - 1e-14:
                    best = (val, cand_a, cand_b)
    return best[1], best[2]


class TestProjection:
    def test_feasible_unchanged(self):
        a = np.array([0.4, 0.1])
        b = np.array([0.3, 0.2])
        pa, pb = project_osc_dual(a, b)
        assert np.allclose(pa, a) and np.allclose(pb, b)

    def test_uniform_overweight_rescaled(self):
        a = np.full(4, 0.5)
        b = np.full(4, 0.5)
        pa, pb = project_osc_dual(a, b)
        assert pa.sum() == pytest.approx(1.0, abs=1e-12)
        assert pb.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(pa, 0.25) and np.allclose(pb, 0.25)

    def test_negatives_clipped(self):
        pa, pb = project_osc_dual(np.array([-1.0, 0.0]), np.array([0.0, 0.0]))
        assert np.all(pa == 0.0) and np.all(pb == 0.0)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), s=st.integers(1, 3))
    def test_matches_active_set_oracle(self, seed, s):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=s) * 1.5
        b = rng.normal(size=s) * 1.5
        pa, pb = project_osc_dual(a, b)
        oa, ob = project_pair_oracle(a, b)
        ours = ((pa - a) ** 2).sum() + ((pb - b) ** 2).sum()
        theirs = ((oa - a) ** 2).sum() + ((ob - b) ** 2).sum()
        assert ours <= theirs + 1e-10
        assert pa.min() >= 0 and pb.min() >= 0
        assert abs(pa.sum() - pb.sum()) <= 1e-10
        assert pa.sum() <= 1.0 + 1e-10

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2 ** 31), s=st.integers(1, 9))
    def test_jit_matches_reference(self, seed, s):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(5, s)) * 2
        b = rng.normal(size=(5, s)) * 2
        pa1, pb1 = project_pair_batch(a, b)
        pa2, pb2 = project_pair_batch_reference(a, b)
        assert np.allclose(pa1, pa2, atol=1e-12)
        assert np.allclose(pb1, pb2, atol=1e-12)
