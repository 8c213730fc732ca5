import math

import numpy as np
import pytest

from mppbsde import (
    Driver,
    GrowthParams,
    SamplePlan,
    SearchSpec,
    TerminalCondition,
    clamp_driver,
    clamp_terminal,
    inf_convolution,
    j_lambda,
    make_driver,
    regularized_driver,
    shift_driver,
    verify_structure,
)
from mppbsde.drivers import weighted_norm

from conftest import unit_spec

ONE = np.array([1.0])


def brute_inf(f, n, u, lo=-20.0, hi=20.0, pts=400_001):
    r = np.linspace(lo, hi, pts)
    return float(np.min(f(r) + n * np.abs(u - r)))


class TestJLambda:
    def test_zero(self):
        assert j_lambda(np.zeros((3, 2)), 1.0, [0.5, 0.5]).tolist() == [0.0, 0.0, 0.0]

    def test_value(self):
        assert j_lambda(np.array([[1.0]]), 1.0, ONE)[0] == pytest.approx(math.e - 2, abs=1e-15)

    def test_symmetry(self):
        a = np.array([[0.7, -0.7]])
        assert j_lambda(a, 2.0, [0.5, 0.5])[0] == pytest.approx(j_lambda(-a, 2.0, [0.5, 0.5])[0], rel=1e-15)

    def test_small_argument_precision(self):
        u = np.array([[1e-6]])
        assert j_lambda(u, 1.0, ONE)[0] == pytest.approx(0.5e-12, rel=1e-6)

    def test_large_argument_overflows_cleanly(self):
        assert np.isinf(j_lambda(np.array([[1000.0]]), 1.0, ONE)[0])

    def test_weighted_norm(self):
        assert weighted_norm(np.array([[3.0, 4.0]]), [0.5, 0.5])[0] == pytest.approx(math.sqrt(12.5))


class TestCatalog:
    def test_unknown(self):
        with pytest.raises(ValueError):
            make_driver("nope:1")

    def test_growth_override(self):
        g = GrowthParams(beta=5.0)
        assert make_driver("zero", g).growth.beta == 5.0

    @pytest.mark.parametrize("name", ["zero", "constant:0.3", "entropic:1", "entropic:2.5", "lipschitz_linear:0.5,1,1", "affine_jump:0.2,0.5,0.5"])
    def test_structure_certified(self, name):
        rep = verify_structure(make_driver(name), SamplePlan(n_samples=400, seed=3, phi=ONE))
        assert rep.passed, rep.margins

    def test_neg_entropic_concave(self):
        rep = verify_structure(make_driver("neg_entropic:1"), SamplePlan(n_samples=400, phi=[0.4, 0.6]))
        assert rep.passed, rep.margins

    def test_understated_lipschitz(self):
        beta = 0.5
        d = Driver("2b|y|", lambda t, y, u, phi: 2 * beta * np.abs(y), GrowthParams(beta=beta))
        rep = verify_structure(d, SamplePlan(n_samples=400, seed=1, phi=ONE))
        assert not rep.verdicts["H3b_lipschitz_y"]
        assert rep.margins["H3b_lipschitz_y"] == pytest.approx(beta, rel=1e-6)

    def test_growth_violation(self):
        d = Driver("bad", lambda t, y, u, phi: 2 * j_lambda(u, 1.0, phi), GrowthParams(), depends_on_y=False)
        rep = verify_structure(d, SamplePlan(n_samples=300, phi=ONE))
        assert not rep.verdicts["H3c_growth"]

    def test_nonconvex_detected(self):
        d = Driver("sin", lambda t, y, u, phi: 0.1 * np.sin(3 * u[:, 0]), GrowthParams.constant_alpha(0.1, c0=0.3))
        assert not verify_structure(d, SamplePlan(n_samples=500, phi=ONE)).verdicts["H3e_convexity"]


class TestInfConvolution:
    def test_lipschitz_below_n(self):
        d = make_driver("lipschitz_linear:0,1.5")
        u = np.linspace(-3, 3, 13)[:, None]
        v, ok = inf_convolution(d, 2.0, 0.0, np.zeros(13), u, ONE)
        assert ok
        np.testing.assert_array_equal(v, d(0.0, np.zeros(13), u, ONE))

    def test_entropic_closed_form(self):
        v, _ = inf_convolution(make_driver("entropic:1"), 2.0, 0.0, [0.0], [[3.0]], ONE)
        assert v[0] == pytest.approx(8 - 3 * math.log(3), abs=1e-9)
        assert v[0] == pytest.approx(brute_inf(lambda r: np.expm1(r) - r, 2.0, 3.0), abs=1e-6)

    def test_fixes_origin(self):
        for name in ("entropic:1", "affine_jump:0.4,0.5", "constant:2"):
            d = make_driver(name)
            v, _ = inf_convolution(d, 4.0, 0.0, [0.0], [[0.0]], ONE)
            assert v[0] == pytest.approx(d.scalar(0.0, 0.0, [0.0], ONE), abs=1e-12)

    def test_below_and_increasing(self):
        d = make_driver("entropic:1")
        u = np.linspace(-4, 4, 33)[:, None]
        vals = [inf_convolution(d, n, 0.0, np.zeros(33), u, ONE)[0] for n in (1, 2, 4, 8)]
        f = d(0.0, np.zeros(33), u, ONE)
        for a, b in zip(vals, vals[1:]):
            assert np.all(a <= b + 1e-12)
        assert np.all(vals[-1] <= f + 1e-12)

    def test_two_marks_against_grid(self):
        d = make_driver("entropic:1")
        phi = np.array([0.5, 0.5])
        u = np.array([[2.5, -1.0]])
        v, _ = inf_convolution(d, 1.5, 0.0, [0.0], u, phi)
        r1, r2 = np.meshgrid(np.linspace(-2, 3, 1001), np.linspace(-2, 3, 1001))
        r = np.stack([r1.ravel(), r2.ravel()], axis=1)
        brute = np.min(d(0.0, np.zeros(len(r)), r, phi) + 1.5 * weighted_norm(u - r, phi))
        assert v[0] <= brute + 1e-9
        assert v[0] == pytest.approx(brute, abs=5e-3)

    def test_regularized_metadata(self):
        dn = regularized_driver(make_driver("entropic:1"), 4.0)
        assert dn.lipschitz_u == 4.0
        assert dn.diagnostics["certified"]
        assert dn.growth.beta == 0.0 and dn.growth.lam == 1.0

    def test_regularized_growth_scaled(self):
        d = make_driver("lipschitz_linear:0.5,0,0.2")
        dn = regularized_driver(d, 3.0)
        assert dn.growth.beta == pytest.approx(1.5) and dn.growth.alpha_values[0] == pytest.approx(0.6)

    def test_rejects_nonpositive_n(self):
        with pytest.raises(ValueError):
            inf_convolution(make_driver("zero"), 0.0, 0.0, [0.0], [[0.0]], ONE)

    def test_concave_mirror(self):
        d = make_driver("neg_entropic:1")
        v, _ = inf_convolution(d, 2.0, 0.0, [0.0], [[-3.0]], ONE)
        assert v[0] == pytest.approx(-(8 - 3 * math.log(3)), abs=1e-9)

    def test_search_tolerance_respected(self):
        coarse = inf_convolution(make_driver("entropic:1"), 2.0, 0.0, [0.0], [[3.0]], ONE, SearchSpec(tol=1e-4))[0][0]
        assert abs(coarse - (8 - 3 * math.log(3))) < 1e-4


class TestTruncations:
    def test_clamp(self):
        assert clamp_driver(make_driver("constant:5"), 3).scalar(0, 0, [0], ONE) == 3
        assert clamp_driver(make_driver("constant:-5"), 3).scalar(0, 0, [0], ONE) == -3

    def test_clamp_noop(self):
        d = make_driver("entropic:1")
        u = np.linspace(-1, 1, 21)[:, None]
        np.testing.assert_array_equal(clamp_driver(d, 10).fn(0, np.zeros(21), u, ONE), d.fn(0, np.zeros(21), u, ONE))

    def test_clamp_terminal(self):
        g = TerminalCondition(lambda c: c[:, 0].astype(float))
        assert clamp_terminal(g, 2)(np.array([[5]]))[0] == 2
        z = TerminalCondition(lambda c: np.zeros(len(c)), bound=0.0)
        assert clamp_terminal(z, 2)(np.array([[5]]))[0] == 0
        b = TerminalCondition(lambda c: np.sin(c[:, 0]), bound=1.0)
        np.testing.assert_array_equal(clamp_terminal(b, 2)(np.arange(9)[:, None]), np.sin(np.arange(9)))

    def test_shift(self):
        d = make_driver("entropic:1")
        u = np.linspace(-1, 1, 5)[:, None]
        np.testing.assert_array_equal(shift_driver(d, 3).fn(0, np.zeros(5), u, ONE), d.fn(0, np.zeros(5), u, ONE))
        s = shift_driver(make_driver("constant:10"), 3)
        assert s.scalar(0, 0, [0.0], ONE) == 3.0

    def test_shift_envelope(self):
        d = make_driver("affine_jump:10,0.5,10")
        s = shift_driver(d, 3)
        g = d.growth
        rng = np.random.default_rng(0)
        u = rng.uniform(-3, 3, (300, 1))
        y = rng.uniform(-3, 3, 300)
        v = s(0.0, y, u, ONE)
        hi = np.array([g.upper_envelope(0.0, 0.0, uu, ONE) for uu in u]) + 2 * g.alpha(0.0) + g.beta * np.abs(y)
        lo = np.array([g.lower_envelope(0.0, 0.0, uu, ONE) for uu in u]) - 2 * g.alpha(0.0) - g.beta * np.abs(y)
        assert np.all(v <= hi) and np.all(v >= lo)


class TestGrowthParams:
    def test_weighted_alpha_integral(self):
        spec = unit_spec()
        g = GrowthParams.constant_alpha(2.0, beta=0.5)
        assert g.weighted_alpha_integral(spec, 0.0, 1.0) == pytest.approx(2.0 * (math.exp(0.5) - 1) / 0.5)
        assert GrowthParams.constant_alpha(2.0).weighted_alpha_integral(spec, 0.25, 1.0) == pytest.approx(1.5)

    def test_piecewise_alpha(self):
        g = GrowthParams(alpha_times=(0.0, 0.5), alpha_values=(1.0, 3.0))
        assert g.weighted_alpha_integral(unit_spec(), 0.0, 1.0) == pytest.approx(2.0)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            GrowthParams(beta=-1.0)


def test_linear_in_u_needs_alpha():
    # L|u| exceeds the entropic envelope near the origin unless alpha absorbs the gap
    rep = verify_structure(make_driver("lipschitz_linear:0,1"), SamplePlan(n_samples=400, seed=3, phi=ONE))
    assert not rep.verdicts["H3c_growth"]
    assert 0 < rep.margins["H3c_growth"] < 1.0


def test_clamp_breaks_convexity():
    clamped = clamp_driver(make_driver("entropic:1"), 0.5)
    rep = verify_structure(clamped, SamplePlan(n_samples=500, seed=2, phi=ONE))
    assert not rep.verdicts["H3e_convexity"]
