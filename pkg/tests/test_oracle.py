import numpy as np
import pytest

from nlflow.errors import BudgetExceededError
from nlflow.frac_energy import FracEnergyParams, perimeter_frac
from nlflow.grid import GridSpec, ScalarField, SetMask, halo_band
from nlflow.oracle import (
    EnumerationBudget,
    enumerate_geometric,
    exact_rof,
    subgradient_rof,
)
from nlflow.osc_energy import OscEnergyParams, perimeter_osc
from nlflow.rof_solver import RofProblem, solve_rof

from conftest import splitmix_field


@pytest.fixture
def enum_spec():
    return GridSpec((8, 8), 1.0, 2)


def coercive_datum(spec, seed, scale=1.0, shift=0.0):
    vals = splitmix_field(spec, seed).values * scale + shift
    vals[halo_band(spec).member] = 3.0
    return ScalarField(spec, vals)


class TestEnumeration:
    def test_positive_datum_empty_minimizer(self, enum_spec):
        p = OscEnergyParams.create(enum_spec, 1.0)
        g = coercive_datum(enum_spec, 1, scale=0.3, shift=0.5)
        res = enumerate_geometric(g, 1.0, p, EnumerationBudget())
        assert res.minimal_mask.count == 0
        assert res.maximal_mask.count == 0
        assert res.min_value == 0.0

    def test_negative_datum_full_interior(self, enum_spec):
        p = OscEnergyParams.create(enum_spec, 1.0)
        g = coercive_datum(enum_spec, 2, scale=0.2, shift=-2.0)
        res = enumerate_geometric(g, 1.0, p, EnumerationBudget())
        assert res.maximal_mask.count == 16
        assert res.minimal_mask.count == 16

    def test_value_consistent_with_energy_ops(self, enum_spec):
        # the enumerated optimum value must equal perimeter + bulk of the
        # reported minimizer, evaluated by the production operators
        for energy in (OscEnergyParams.create(enum_spec, 1.0),
                       FracEnergyParams.create(enum_spec, 0.5, 2.0)):
            g = coercive_datum(enum_spec, 3)
            res = enumerate_geometric(g, 0.7, energy, EnumerationBudget())
            e = res.maximal_mask
            if isinstance(energy, OscEnergyParams):
                per = perimeter_osc(e, energy)
            else:
                per = perimeter_frac(e, energy)
            bulk = float(g.values[e.member].sum()) * enum_spec.cell_volume / 0.7
            assert per + bulk == pytest.approx(res.min_value, abs=1e-10)

    def test_budget(self, enum_spec):
        p = OscEnergyParams.create(enum_spec, 1.0)
        g = coercive_datum(enum_spec, 4)
        with pytest.raises(BudgetExceededError):
            enumerate_geometric(g, 1.0, p, EnumerationBudget(max_cells=8))

    def test_lattice_structure_with_ties(self):
        # a symmetric datum produces tied minimizers closed under union
        # and intersection
        spec = GridSpec((6, 6), 1.0, 2)
        p = OscEnergyParams.create(spec, 1.0)
        vals = np.full(spec.dims, 3.0)
        vals[2, 2] = -0.1
        vals[3, 3] = -0.1
        vals[2, 3] = 1.0
        vals[3, 2] = 1.0
        g = ScalarField(spec, vals)
        res = enumerate_geometric(g, 1.0, p, EnumerationBudget())
        assert res.lattice_closed

    def test_threshold_level_matches(self, enum_spec):
        p = OscEnergyParams.create(enum_spec, 1.0)
        g = coercive_datum(enum_spec, 6)
        t = 0.2
        res = enumerate_geometric(g, 1.0, p, EnumerationBudget(), t=t)
        sol = solve_rof(RofProblem(p, g, 1.0), tol=1e-11, max_iter=300000)
        from nlflow.rof_solver import threshold_solution

        _, e = threshold_solution(sol.u, t)
        assert np.array_equal(e.member, res.maximal_mask.member)


class TestCrossSolver:
    @pytest.mark.parametrize("energy_kind", ["osc", "frac"])
    def test_exact_reference_agreement(self, enum_spec, energy_kind):
        if energy_kind == "osc":
            energy = OscEnergyParams.create(enum_spec, 1.0)
        else:
            energy = FracEnergyParams.create(enum_spec, 0.5, 2.0)
        g = splitmix_field(enum_spec, 10)
        prob = RofProblem(energy, g, 1.0)
        sol = solve_rof(prob, tol=1e-10, max_iter=200000)
        val, _ = exact_rof(prob)
        assert sol.objective == pytest.approx(val, rel=1e-6, abs=1e-7)

    def test_subgradient_best_value_decreases(self, enum_spec):
        energy = OscEnergyParams.create(enum_spec, 1.0)
        g = splitmix_field(enum_spec, 11)
        prob = RofProblem(energy, g, 1.0)
        v1, _ = subgradient_rof(prob, iters=200)
        v2, _ = subgradient_rof(prob, iters=3000)
        assert v2 <= v1 + 1e-12
        sol = solve_rof(prob, tol=1e-10)
        assert v2 >= sol.objective - 1e-9
