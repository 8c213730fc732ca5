import math

import numpy as np
import pytest
from scipy import stats

from mppbsde import (
    ContractionError,
    LatticeError,
    PredictableField,
    TerminalCondition,
    TimeGrid,
    closed_form_zero_driver,
    entropic_closed_form,
    forward_law,
    forward_residual,
    integral_nu,
    integral_p,
    make_driver,
    sample_trajectory,
    simulate_path,
    solve_backward,
    transition_kernel,
)
from mppbsde.lattice import StateSpace, choose_n_max

from conftest import ENTROPIC_Y0, ZERO_Y0, count_terminal, indicator, unit_spec


class TestStateSpace:
    def test_sizes(self):
        assert StateSpace(1, 5).size == 6
        assert StateSpace(2, 3).size == 10
        assert StateSpace(3, 2).size == math.comb(5, 3)

    def test_index_roundtrip(self):
        s = StateSpace(2, 4)
        np.testing.assert_array_equal(s.index(s.counts), np.arange(s.size))
        assert s.index([[5, 0]])[0] == -1 and s.index([[-1, 0]])[0] == -1

    def test_up_pointer(self):
        s = StateSpace(2, 2)
        i = s.index([[1, 0]])[0]
        assert s.up[i, 1] == s.index([[1, 1]])[0]
        top = s.index([[2, 0]])[0]
        assert (s.up[top] == -1).all()


class TestKernel:
    def test_poisson_total(self, spec):
        k = transition_kernel(spec, 0.0, 0.5, j_max=8)
        np.testing.assert_allclose(k.probs[:9], stats.poisson.pmf(np.arange(9), 0.5), rtol=1e-13)
        assert k.tail_mass < 1e-12
        assert k.probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_multinomial_split(self):
        spec = unit_spec(K=2, phi=[0.25, 0.75])
        k = transition_kernel(spec, 0.0, 1.0)
        mask = (k.increments == [1, 0]).all(axis=1)
        assert k.probs[mask][0] == pytest.approx(math.exp(-1) * 0.25, rel=1e-13)

    def test_j_max_raised(self):
        spec = unit_spec(A_end=20.0)
        assert transition_kernel(spec, 0.0, 1.0, j_max=2).j_max > 20

    def test_flat_step(self):
        spec = unit_spec(A_end=0.0)
        k = transition_kernel(spec, 0.0, 1.0)
        assert k.probs.tolist() == [1.0] and k.dA == 0.0

    def test_ceiling(self):
        with pytest.raises(LatticeError):
            transition_kernel(unit_spec(A_end=1000.0), 0.0, 1.0)

    def test_bad_interval(self, spec):
        with pytest.raises(ValueError):
            transition_kernel(spec, 0.5, 0.5)


class TestOracles:
    def test_zero_driver(self, zero_field):
        assert zero_field.y0() == pytest.approx(ZERO_Y0, abs=1e-10)

    def test_zero_driver_everywhere(self, zero_field, spec, xi):
        g = zero_field.grid
        for i in (0, 250, 999):
            for n in (0, 1, 4):
                want = closed_form_zero_driver(spec, xi, g.times[i], [n])
                assert zero_field.y[i, n] == pytest.approx(want, abs=1e-10)

    def test_constant_driver(self, spec, xi, grid):
        f = solve_backward(spec, make_driver("constant:0.5"), xi, grid, n_max=30)
        assert f.y0() == pytest.approx(ZERO_Y0 + 0.5, abs=1e-10)

    def test_entropic_first_order(self, entropic_field):
        assert abs(entropic_field.y0() - ENTROPIC_Y0) < 5e-4

    def test_entropic_rk4(self, entropic_rk4):
        assert entropic_rk4.y0() == pytest.approx(ENTROPIC_Y0, abs=1e-12)

    def test_entropic_closed_form_formula(self, spec, xi):
        assert entropic_closed_form(spec, xi, 1.0, 0.0, [0]) == pytest.approx(ENTROPIC_Y0, abs=1e-14)
        assert entropic_closed_form(spec, xi, 1.0, 1.0, [0]) == 0.0
        assert entropic_closed_form(spec, xi, 1.0, 0.3, [2]) == pytest.approx(1.0, abs=1e-14)

    def test_count_mean(self, spec):
        assert closed_form_zero_driver(spec, count_terminal(), 0.0, [0]) == pytest.approx(1.0, abs=1e-12)

    def test_small_lambda_approaches_zero_driver(self, spec, xi):
        assert entropic_closed_form(spec, xi, 1e-4, 0.0, [0]) == pytest.approx(ZERO_Y0, abs=1e-4)

    def test_closed_form_rejects_lambda(self, spec, xi):
        with pytest.raises(ValueError):
            entropic_closed_form(spec, xi, 0.0, 0.0, [0])

    def test_first_order_convergence(self, spec, xi):
        errs = []
        for N in (100, 200, 400):
            f = solve_backward(spec, make_driver("entropic:1"), xi, TimeGrid.uniform(spec, N), n_max=30)
            errs.append(abs(f.y0() - ENTROPIC_Y0))
        order = np.polyfit(np.log([100, 200, 400]), np.log(errs), 1)[0]
        assert -1.1 < order < -0.9

    def test_two_marks_zero_driver(self):
        spec = unit_spec(K=2, phi=[0.3, 0.7])
        xi = TerminalCondition(lambda c: np.minimum(c[:, 0] - c[:, 1], 2).astype(float))
        f = solve_backward(spec, make_driver("zero"), xi, TimeGrid.uniform(spec, 50), n_max=18)
        assert f.y0() == pytest.approx(closed_form_zero_driver(spec, xi, 0.0, [0, 0]), abs=1e-9)

    def test_piecewise_compensator(self):
        from mppbsde import CompensatorSpec, MarkSpace

        spec = CompensatorSpec(MarkSpace((0, 1)), (0.0, 0.5), ((0.2, 0.8), (0.9, 0.1)), (0.0, 0.4, 1.0), (0.0, 0.2, 1.5), 1.0)
        xi = TerminalCondition(lambda c: (c[:, 0] >= 1).astype(float))
        f = solve_backward(spec, make_driver("zero"), xi, TimeGrid.uniform(spec, 40), n_max=20)
        assert f.y0() == pytest.approx(closed_form_zero_driver(spec, xi, 0.0, [0, 0]), abs=1e-9)


class TestSolver:
    def test_terminal_layer(self, entropic_field, xi):
        np.testing.assert_array_equal(entropic_field.y[-1], xi(entropic_field.states.counts))

    def test_jumps_match_differences(self, entropic_field):
        s = entropic_field.states
        np.testing.assert_allclose(entropic_field.u[10, 0, 0], entropic_field.y[11, 1] - entropic_field.y[11, 0], rtol=0, atol=0)
        assert entropic_field.u.shape == (1000, s.size, 1)

    def test_unknown_scheme(self, spec, xi, grid):
        with pytest.raises(ValueError):
            solve_backward(spec, make_driver("zero"), xi, grid, scheme="euler2")

    def test_implicit_contraction(self, spec, xi):
        g = TimeGrid.uniform(spec, 10)
        with pytest.raises(ContractionError):
            solve_backward(spec, make_driver("lipschitz_linear:2000,0"), xi, g, implicit=True, n_max=20)

    def test_implicit_matches_explicit(self, spec, xi):
        g = TimeGrid.uniform(spec, 400)
        d = make_driver("lipschitz_linear:0.5,0")
        a = solve_backward(spec, d, xi, g, n_max=20).y0()
        b = solve_backward(spec, d, xi, g, n_max=20, implicit=True).y0()
        exact = ZERO_Y0 * math.exp(0.5)
        assert abs(a - exact) < 2e-3 and abs(b - exact) < 2e-3

    def test_truncation_error(self, spec, xi, grid):
        with pytest.raises(LatticeError, match="raise n_max"):
            solve_backward(spec, make_driver("zero"), xi, grid, n_max=3)

    def test_nonfinite_terminal(self, spec, grid):
        xi = TerminalCondition(lambda c: np.where(c[:, 0] > 0, np.inf, 0.0))
        with pytest.raises(LatticeError):
            solve_backward(spec, make_driver("zero"), xi, grid, n_max=20)

    def test_overflow_detected(self, spec):
        xi = TerminalCondition(lambda c: 800.0 * c[:, 0])
        with pytest.raises(LatticeError, match="non-finite"):
            solve_backward(spec, make_driver("entropic:1"), xi, TimeGrid.uniform(spec, 20), n_max=20)

    def test_choose_n_max(self, spec):
        n = choose_n_max(spec)
        assert stats.poisson.sf(n - 1, 1.0) < 1e-10

    def test_csv_rows(self, spec, xi):
        f = solve_backward(spec, make_driver("zero"), xi, TimeGrid.uniform(spec, 2), n_max=14)
        rows = list(f.csv_rows())
        assert len(rows) == 3 * 15 and math.isnan(rows[-1][-1])


class TestForwardLaw:
    def test_poisson(self, spec, grid):
        law = forward_law(spec, grid, n_max=30)
        for i in (0, 400, 1000):
            a = spec.A(grid.times[i])
            np.testing.assert_allclose(law.probs[i], stats.poisson.pmf(np.arange(31), a), atol=1e-9)
        assert law.probs[0, 0] == 1.0 and law.probs[0, 1:].sum() == 0.0

    def test_mass_conserved(self, spec, grid):
        law = forward_law(spec, grid, n_max=6)
        np.testing.assert_allclose(law.probs.sum(axis=1), 1.0, atol=1e-13)
        assert law.boundary_mass == pytest.approx(stats.poisson.sf(5, 1.0), rel=1e-10)


class TestPaths:
    def test_trajectory(self, entropic_field, spec, xi):
        for seed in range(20):
            path = simulate_path(spec, seed)
            tr = sample_trajectory(entropic_field, path)
            assert tr.Y[-1] == xi(path.counts_at(1.0)[None, :])[0]
            pre = np.flatnonzero(tr.kind == "pre")
            np.testing.assert_allclose(tr.Y[pre + 1] - tr.Y[pre], [tr.U[k][m] for k, m in zip(pre, path.marks)], atol=0)
            assert tr.jumps().size == len(path)

    def test_horizon_mismatch(self, entropic_field):
        path = simulate_path(unit_spec(T=2.0), 0)
        with pytest.raises(ValueError):
            sample_trajectory(entropic_field, path)

    def test_residual_needs_paths(self, zero_field, spec):
        with pytest.raises(ValueError):
            forward_residual(zero_field, spec, make_driver("zero"), [])

    def test_residual_small(self, zero_field, spec):
        r = forward_residual(zero_field, spec, make_driver("zero"), range(200))
        assert r.max_abs < 1e-3 and r.M == 200


def test_continuous_oracle_martingale_representation(spec):
    """For f = 0 and g = 1{n>=1}: Y_0 = g(N_T) - int U dq exactly, where
    U(t, 0) = exp(-(1-t)) and U vanishes once an event has occurred."""
    U = PredictableField(lambda t, c, e: np.where(c[:, 0] == 0, np.exp(-(1.0 - t)), 0.0), vectorized=True)
    worst = 0.0
    for seed in range(300):
        path = simulate_path(spec, seed)
        g = float(path.counts_at(1.0)[0] >= 1)
        q = integral_p(path, U) - integral_nu(spec, U, path, 0.01)
        worst = max(worst, abs(ZERO_Y0 - g + q))
    assert worst < 1e-8
