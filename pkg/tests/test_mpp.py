import numpy as np
import pytest

from mppbsde import (
    CompensatorSpec,
    MarkSpace,
    Modulus,
    MppPath,
    PredictableField,
    SpecError,
    integral_nu,
    integral_p,
    integral_q,
    simulate_path,
    simulate_paths,
)
from mppbsde.mpp import paths_to_rows

from conftest import unit_spec


def time_field():
    return PredictableField(lambda t, counts, mark: np.asarray(t, float), vectorized=True)


class TestSpec:
    def test_rejects_bad_phi(self):
        with pytest.raises(SpecError):
            CompensatorSpec(MarkSpace((0,)), (0.0,), ((0.9,),), (0.0, 1.0), (0.0, 1.0), 1.0)

    def test_rejects_decreasing_A(self):
        with pytest.raises(SpecError):
            CompensatorSpec(MarkSpace((0,)), (0.0,), ((1.0,),), (0.0, 0.5, 1.0), (0.0, 1.0, 0.5), 1.0)

    def test_rejects_modulus_too_small(self):
        with pytest.raises(SpecError):
            CompensatorSpec(MarkSpace((0,)), (0.0,), ((1.0,),), (0.0, 1.0), (0.0, 2.0), 1.0, Modulus(1.0))

    def test_duplicate_marks(self):
        with pytest.raises(SpecError):
            MarkSpace((0, 0))

    def test_generalized_inverse(self):
        s = CompensatorSpec(MarkSpace((0,)), (0.0,), ((1.0,),), (0.0, 0.5, 0.7, 1.0), (0.0, 1.0, 1.0, 2.0), 1.0)
        assert s.A_inv(0.5) == pytest.approx(0.25)
        assert s.A_inv(1.5) == pytest.approx(0.85)
        assert s.A_inv(1.0) == pytest.approx(0.5)  # left end of the flat piece
        np.testing.assert_allclose(s.A(s.A_inv(np.linspace(0, 2, 9))), np.linspace(0, 2, 9))

    def test_phi_right_continuous(self):
        s = CompensatorSpec(MarkSpace((0, 1)), (0.0, 0.5), ((1.0, 0.0), (0.0, 1.0)), (0.0, 1.0), (0.0, 1.0), 1.0)
        np.testing.assert_array_equal(s.phi(0.5), [0.0, 1.0])
        np.testing.assert_allclose(s.phi_average(0.0, 1.0), [0.5, 0.5])


class TestSimulation:
    def test_reproducible(self):
        s = unit_spec(2, [0.3, 0.7], A_end=3.0)
        assert simulate_path(s, 7) == simulate_path(s, 7)
        assert simulate_paths(s, range(20), jobs=4) == simulate_paths(s, range(20))

    def test_zero_intensity_is_empty(self):
        s = unit_spec(A_end=0.0)
        assert all(len(simulate_path(s, k)) == 0 for k in range(50))

    def test_poisson_mean(self):
        s = unit_spec()
        n = np.array([len(simulate_path(s, k)) for k in range(100_000)])
        assert abs(n.mean() - 1.0) < 0.01

    def test_thinning(self):
        s = unit_spec(2, [0.3, 0.7], A_end=2.0)
        c = np.array([simulate_path(s, k).counts_at(1.0) for k in range(100_000)])
        assert abs(c[:, 0].mean() - 0.6) < 0.02
        assert abs(c[:, 1].mean() - 1.4) < 0.03

    def test_path_validation(self):
        with pytest.raises(SpecError):
            MppPath([0.5, 0.4], [0, 0], 1.0, 1)
        with pytest.raises(SpecError):
            MppPath([0.5], [2], 1.0, 1)

    def test_rows(self):
        p = MppPath([0.2, 0.6], [0, 1], 1.0, 2)
        assert list(paths_to_rows([p], [5])) == [(5, 0.2, 0), (5, 0.6, 1)]


class TestIntegrals:
    spec = unit_spec()

    def test_empty_path(self):
        p = MppPath([], [], 1.0, 1)
        assert integral_p(p, time_field()) == 0.0

    def test_counting(self):
        p = MppPath([0.1, 0.4, 0.9], [0, 0, 0], 1.0, 1)
        assert integral_p(p, PredictableField.constant(1.0)) == 3.0

    def test_direct_sum(self):
        p = MppPath([0.25, 0.5], [0, 0], 1.0, 1)
        assert integral_p(p, time_field()) == pytest.approx(0.75)

    def test_nu(self):
        p = MppPath([0.3], [0], 1.0, 1)
        assert integral_nu(self.spec, PredictableField.constant(0.0), p, 0.01) == 0.0
        assert integral_nu(self.spec, PredictableField.constant(1.0), p, 0.01) == pytest.approx(1.0, abs=1e-14)
        assert integral_nu(self.spec, time_field(), p, 0.01) == pytest.approx(0.5, abs=1e-14)

    def test_nu_uses_pre_event_counts(self):
        p = MppPath([0.5], [0], 1.0, 1)
        H = PredictableField(lambda t, c, e: c[..., 0].astype(float), vectorized=True)
        assert integral_nu(self.spec, H, p, 0.01) == pytest.approx(0.5, abs=1e-14)
        assert integral_p(p, H) == 0.0  # predictable: sees counts strictly before the event

    def test_nu_rejects_step(self):
        with pytest.raises(ValueError):
            integral_nu(self.spec, PredictableField.constant(1.0), MppPath([], [], 1.0, 1), 0.0)

    def test_q(self):
        p = MppPath([0.2, 0.7], [0, 0], 1.0, 1)
        assert integral_q(self.spec, p, PredictableField.constant(0.0), 0.01) == 0.0
        assert integral_q(self.spec, p, PredictableField.constant(1.0), 0.01) == pytest.approx(1.0)

    def test_q_martingale(self):
        H = PredictableField.constant(1.0)
        v = np.array([integral_q(self.spec, simulate_path(self.spec, k), H, 1.0) for k in range(100_000)])
        assert abs(v.mean()) < 0.01

    def test_piecewise_compensator(self):
        s = CompensatorSpec(MarkSpace((0, 1)), (0.0, 0.5), ((0.2, 0.8), (0.6, 0.4)), (0.0, 0.5, 1.0), (0.0, 0.5, 2.0), 1.0)
        H = PredictableField(lambda t, c, e: np.full(np.shape(t), float(e)), vectorized=True)
        # mark 1 mass: 0.8 * 0.5 + 0.4 * 1.5
        assert integral_nu(s, H, MppPath([], [], 1.0, 2), 0.05) == pytest.approx(1.0, abs=1e-13)
