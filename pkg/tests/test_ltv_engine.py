import numpy as np
import pytest
from src.engines.lti_engine import matrix_exp
from src.engines.ltv_engine import (
    LtvEngine,
    commutator_check,
    impulse_response,
    ltv_forced,
    peano_baker,
    peano_baker_terms,
    semigroup_check,
    stm_by_basis_solves,
    stm_commuting,
    stm_derivative_residual,
)
from src.exceptions import CommutativityError, ConvergenceError, ValidationError
from src.oracle import OracleConfig
from src.records import ImpulseSpec
from src.systems import InputSignal, LtvSystem
from src.kernel_ops import neumann_inverse_apply, volterra_times
from src.timegrid import TimeGrid

ROTATION = [[0.0, -1.0], [1.0, 0.0]]
FAST_ORACLE = OracleConfig(substeps=2)


@pytest.fixture
def unit_grid():
    return TimeGrid.uniform(0.0, 1.0, 1000)


@pytest.fixture
def noncommuting():
    return LtvSystem.from_expressions([["t", "1"], ["-1", "0"]])


@pytest.fixture
def sine_rotation():
    return LtvSystem.from_expressions([["0", "sin(t)"], ["-sin(t)", "0"]])


def _sine_rotation_exact(t):
    M = np.array([[0.0, 1.0], [-1.0, 0.0]])
    return matrix_exp(M, 1.0 - np.cos(t))


class TestPeanoBaker:
    def test_zero_matrix_needs_one_term(self, unit_grid):
        table = peano_baker(LtvSystem.constant(np.zeros((2, 2))), 0.0, unit_grid)
        assert table.terms_used == 1
        assert np.all(table.matrices == np.eye(2))

    def test_constant_rotation(self):
        grid = TimeGrid.uniform(0.0, 1.0, 2000)
        table = peano_baker(LtvSystem.constant(ROTATION), 0.0, grid)
        assert np.max(np.abs(table.at(1.0) - matrix_exp(np.array(ROTATION), 1.0))) <= 1e-6
        assert table.route == "peano-baker"
        assert table.tail_bound < 1e-9

    def test_scalar_ramp(self):
        grid = TimeGrid.uniform(0.0, 1.0, 2000)
        table = peano_baker(LtvSystem.from_expressions([["2*t"]]), 0.0, grid)
        assert table.at(1.0)[0, 0] == pytest.approx(np.e, rel=1e-5)

    def test_identity_at_base(self, noncommuting, unit_grid):
        table = peano_baker(noncommuting, 0.4, unit_grid)
        np.testing.assert_array_equal(table.at(0.4), np.eye(2))

    def test_backward_from_interior_base(self, unit_grid):
        table = peano_baker(LtvSystem.from_expressions([["-1"]]), 1.0, unit_grid)
        assert table.at(0.0)[0, 0] == pytest.approx(np.e, rel=1e-6)

    def test_off_grid_base_rejected(self, noncommuting, unit_grid):
        with pytest.raises(ValidationError):
            peano_baker(noncommuting, 0.00037, unit_grid)

    def test_term_budget_exhausted(self):
        grid = TimeGrid.uniform(0.0, 5.0, 500)
        with pytest.raises(ConvergenceError) as info:
            peano_baker(LtvSystem.constant(ROTATION), 0.0, grid, max_terms=3)
        assert info.value.terms_used == 4
        assert len(info.value.diagnostics["term_norms"]) == 4
        assert len(info.value.diagnostics["bound_sequence"]) == 4

    def test_terms_of_unit_scalar(self, unit_grid):
        terms = peano_baker_terms(LtvSystem.from_expressions([["1"]]), 0.0, unit_grid, 3)
        t = unit_grid.points
        np.testing.assert_allclose(terms[1][:, 0, 0], t, atol=1e-12)
        np.testing.assert_allclose(terms[2][:, 0, 0], t ** 2 / 2, atol=1e-12)
        np.testing.assert_allclose(terms[3][:, 0, 0], t ** 3 / 6, atol=1e-6)

    def test_terms_sum_to_table(self, noncommuting, unit_grid):
        table = peano_baker(noncommuting, 0.0, unit_grid)
        terms = peano_baker_terms(noncommuting, 0.0, unit_grid, table.terms_used - 1)
        np.testing.assert_allclose(terms.sum(axis=0), table.matrices, atol=1e-13)

    def test_commuting_family_closed_form(self, sine_rotation, unit_grid):
        table = peano_baker(sine_rotation, 0.0, unit_grid)
        for t in (0.25, 0.5, 1.0):
            assert np.max(np.abs(table.at(t) - _sine_rotation_exact(t))) <= 1e-6


class TestTermForms:
    def test_iterated_integral_form(self, noncommuting):
        grid = TimeGrid.uniform(0.0, 1.0, 40)
        A = noncommuting.sample(grid)
        W = np.stack([grid.interval_weights(i) for i in range(len(grid))])
        terms = peano_baker_terms(noncommuting, 0.0, grid, 3)
        nested = [
            np.einsum("ij,jab->iab", W, A),
            np.einsum("ij,jl,jab,lbc->iac", W, W, A, A, optimize=True),
            np.einsum("ij,jl,lm,jab,lbc,mcd->iad", W, W, W, A, A, A, optimize=True),
        ]
        for k, form in enumerate(nested, start=1):
            np.testing.assert_allclose(terms[k], form, atol=1e-13)

    def test_operator_route_matches_series(self, noncommuting):
        grid = TimeGrid.uniform(0.0, 1.0, 200)
        identity = np.broadcast_to(np.eye(2), (len(grid), 2, 2)).copy()
        operator_route, diagnostics = neumann_inverse_apply(volterra_times(grid, noncommuting.sample(grid)), identity, rtol=1e-14)
        table = peano_baker(noncommuting, 0.0, grid, rtol=1e-14)
        assert diagnostics.converged
        assert np.max(np.abs(operator_route - table.matrices)) <= 1e-12


class TestCommutingShortcut:
    def test_matches_closed_form(self, sine_rotation, unit_grid):
        table = stm_commuting(sine_rotation, 0.0, unit_grid)
        assert table.route == "commuting"
        assert np.max(np.abs(table.at(1.0) - _sine_rotation_exact(1.0))) <= 1e-6

    def test_diagonal_family(self, unit_grid):
        sys = LtvSystem.from_expressions([["t", "0"], ["0", "-1"]])
        table = stm_commuting(sys, 0.0, unit_grid)
        np.testing.assert_allclose(np.diag(table.at(1.0)), [np.exp(0.5), np.exp(-1.0)], rtol=1e-6)

    def test_refused_for_noncommuting(self, noncommuting, unit_grid):
        with pytest.raises(CommutativityError) as info:
            stm_commuting(noncommuting, 0.0, unit_grid)
        assert info.value.commutator_norm > info.value.tolerance

    def test_check_is_reproducible(self, noncommuting, unit_grid):
        assert commutator_check(noncommuting, unit_grid, seed=7) == commutator_check(noncommuting, unit_grid, seed=7)

    def test_hint_alone_is_not_trusted(self, unit_grid):
        sys = LtvSystem.from_expressions([["t", "1"], ["-1", "0"]], commuting_hint=True)
        with pytest.raises(CommutativityError):
            stm_commuting(sys, 0.0, unit_grid)


class TestBasisSolves:
    def test_identity_basis_matches_series(self, noncommuting):
        grid = TimeGrid.uniform(0.0, 1.0, 2000)
        basis = stm_by_basis_solves(noncommuting, 0.0, grid, cfg=FAST_ORACLE)
        series = peano_baker(noncommuting, 0.0, grid)
        assert np.max(np.abs(basis.matrices - series.matrices)) <= 1e-6

    def test_basis_independent(self, noncommuting, unit_grid, rng):
        V = rng.normal(size=(2, 2)) + 2 * np.eye(2)
        identity = stm_by_basis_solves(noncommuting, 0.0, unit_grid, cfg=FAST_ORACLE)
        other = stm_by_basis_solves(noncommuting, 0.0, unit_grid, basis=V, cfg=FAST_ORACLE)
        np.testing.assert_allclose(other.matrices, identity.matrices, atol=1e-10)

    def test_interior_base(self, noncommuting, unit_grid):
        table = stm_by_basis_solves(noncommuting, 0.5, unit_grid, cfg=FAST_ORACLE)
        np.testing.assert_array_equal(table.at(0.5), np.eye(2))
        series = peano_baker(noncommuting, 0.5, unit_grid)
        assert np.max(np.abs(table.matrices - series.matrices)) <= 1e-6

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_random_systems_and_bases(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.uniform(-0.5, 0.5, size=(2, 2, 2))
        sys = LtvSystem.from_expressions(
            [[f"{a[i, j]:.4f} + {b[i, j]:.4f}*sin(t)" for j in range(2)] for i in range(2)]
        )
        grid = TimeGrid.uniform(0.0, 1.0, 2000)
        V = rng.normal(size=(2, 2)) + 2 * np.eye(2)
        identity = stm_by_basis_solves(sys, 0.0, grid, cfg=FAST_ORACLE)
        other = stm_by_basis_solves(sys, 0.0, grid, basis=V, cfg=FAST_ORACLE)
        series = peano_baker(sys, 0.0, grid)
        assert np.max(np.abs(identity.matrices - series.matrices)) <= 1e-6
        assert np.max(np.abs(other.matrices - identity.matrices)) <= 1e-8

    def test_singular_basis_rejected(self, noncommuting, unit_grid):
        with pytest.raises(ValidationError):
            stm_by_basis_solves(noncommuting, 0.0, unit_grid, basis=[[1.0, 2.0], [2.0, 4.0]])

    def test_wrong_basis_shape(self, noncommuting, unit_grid):
        with pytest.raises(ValidationError):
            stm_by_basis_solves(noncommuting, 0.0, unit_grid, basis=np.eye(3))


class TestForcedResponse:
    def test_decay_with_sine_input(self, unit_grid):
        sys = LtvSystem.from_expressions([["-1"]])
        w = InputSignal.from_expressions(["sin(t)"]).sample(unit_grid)
        trajectory = ltv_forced(sys, [0.0], 0.0, w, grid=unit_grid)
        expected = (np.sin(1.0) - np.cos(1.0) + np.exp(-1.0)) / 2
        assert trajectory.final_state[0] == pytest.approx(expected, abs=1e-6)

    def test_superposition(self, noncommuting, unit_grid, rng):
        w1 = rng.normal(size=(len(unit_grid), 2))
        w2 = rng.normal(size=(len(unit_grid), 2))
        x0 = np.array([1.0, -0.5])
        both = ltv_forced(noncommuting, x0, 0.0, w1 + w2, grid=unit_grid)
        first = ltv_forced(noncommuting, x0, 0.0, w1, grid=unit_grid)
        second = ltv_forced(noncommuting, np.zeros(2), 0.0, w2, grid=unit_grid)
        np.testing.assert_allclose(both.states, first.states + second.states, atol=1e-12)

    def test_impulse_on_integrator(self, unit_grid):
        sys = LtvSystem.from_expressions([["0"]])
        trajectory = ltv_forced(sys, [0.0], 0.0, impulses=ImpulseSpec.of([(0.5, [2.0])]), grid=unit_grid)
        states = trajectory.states[:, 0]
        index = unit_grid.index_of(0.5)
        assert np.all(states[:index] == 0.0)
        np.testing.assert_allclose(states[index:], 2.0, atol=1e-14)

    def test_impulse_response_follows_transition(self, noncommuting, unit_grid):
        response = impulse_response(noncommuting, 0.3, [1.0, 0.0], unit_grid)
        table = peano_baker(noncommuting, 0.3, unit_grid)
        np.testing.assert_allclose(response.at(0.8), table.at(0.8) @ [1.0, 0.0], atol=1e-9)
        assert np.all(response.states[: unit_grid.index_of(0.3)] == 0.0)

    def test_impulse_before_reference_rejected(self, noncommuting, unit_grid):
        with pytest.raises(ValidationError):
            ltv_forced(noncommuting, [0.0, 0.0], 0.5, impulses=ImpulseSpec.of([(0.25, [1.0, 0.0])]), grid=unit_grid)

    def test_off_grid_impulse_rejected(self, noncommuting, unit_grid):
        with pytest.raises(ValidationError):
            ltv_forced(noncommuting, [0.0, 0.0], 0.0, impulses=ImpulseSpec.of([(0.12345, [1.0, 0.0])]), grid=unit_grid)

    def test_input_shape_checked(self, noncommuting, unit_grid):
        with pytest.raises(ValidationError):
            ltv_forced(noncommuting, [0.0, 0.0], 0.0, np.zeros((3, 2)), grid=unit_grid)


class TestIdentities:
    def test_semigroup_and_inverse(self, noncommuting, unit_grid):
        residual = semigroup_check(peano_baker, noncommuting, (0.0, 0.5, 1.0), unit_grid)
        assert residual.worst <= 1e-8

    def test_semigroup_for_commuting_route(self, sine_rotation, unit_grid):
        residual = semigroup_check(stm_commuting, sine_rotation, (0.2, 0.6, 0.9), unit_grid)
        assert residual.worst <= 1e-8

    def test_derivative_residual(self, noncommuting, unit_grid):
        table = peano_baker(noncommuting, 0.0, unit_grid)
        assert stm_derivative_residual(table, noncommuting) <= 1e-5

    def test_derivative_residual_needs_three_points(self, noncommuting):
        grid = TimeGrid.uniform(0.0, 1.0, 1)
        table = peano_baker(noncommuting, 0.0, grid)
        with pytest.raises(ValidationError):
            stm_derivative_residual(table, noncommuting)


class TestLtvEngine:
    def test_routes_agree(self, sine_rotation, unit_grid):
        signal = InputSignal.from_expressions(["1", "cos(t)"])
        results = {
            route: LtvEngine(sine_rotation, route=route, oracle=FAST_ORACLE).solve([1.0, 0.0], unit_grid, signal)
            for route in ("peano-baker", "commuting", "basis-solve")
        }
        reference = results["peano-baker"].states
        for trajectory in results.values():
            assert np.max(np.abs(trajectory.states - reference)) <= 1e-6

    def test_solve_keeps_last_table(self, noncommuting, unit_grid):
        engine = LtvEngine(noncommuting)
        trajectory = engine.solve([1.0, 0.0], unit_grid)
        assert engine.last_table is not None
        np.testing.assert_allclose(trajectory.states, engine.last_table.matrices @ [1.0, 0.0])

    def test_unknown_route(self, noncommuting):
        with pytest.raises(ValidationError):
            LtvEngine(noncommuting, route="magnus")

    def test_transition_table_route(self, noncommuting, unit_grid):
        table = LtvEngine(noncommuting, route="basis-solve", oracle=FAST_ORACLE).transition_table(0.0, unit_grid)
        assert table.route == "basis-solve"
