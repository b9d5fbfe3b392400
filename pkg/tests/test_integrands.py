from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xfg import integrands as ig
from xfg import vector_fields as vf
from xfg.errors import ArgumentError, SingularityError

BIG = vf.Box.cube(2, -5.0, 5.0)
ORIGIN3 = np.zeros(3)


def sq(arity):
    return ig.power(arity, 2.0)


class TestEvaluate:
    def test_quadratic(self):
        assert ig.evaluate(ig.quadratic(np.eye(2)), np.zeros(2), [3, 4]) == 25

    def test_autonomous_zero(self):
        assert ig.evaluate(ig.power(2, 2.0), np.zeros(2), [0, 0]) == 0

    def test_general(self):
        f = ig.from_expression("x1^2*(eta1^2+eta2^2)", 2, 2)
        assert ig.evaluate(f, np.array([2.0, 0.0]), [1, 1]) == pytest.approx(8)
        assert f.kind == "quadratic"

    def test_dimension_mismatch(self):
        with pytest.raises(ArgumentError):
            ig.evaluate(sq(2), np.zeros(2), [1, 2, 3])

    def test_negative_rejected(self):
        with pytest.raises(ArgumentError):
            ig.evaluate(ig.from_expression("-eta1^2", 1, 1), np.zeros(1), [1.0])

    def test_asymmetric_quadratic(self):
        with pytest.raises(ArgumentError):
            ig.quadratic([[1, 2], [0, 1]])

    def test_kind_detection(self):
        assert ig.from_expression("eta1^2+3*eta2^2", 2, 2).kind == "autonomous"
        assert ig.from_expression("eta1^4", 2, 2).kind == "autonomous"
        assert ig.from_expression("(1+x1^2)*eta1^2", 2, 2).kind == "quadratic"
        assert ig.from_expression("x1*eta1^4", 2, 2).kind == "general"


class TestLift:
    def test_grushin_hand(self):
        fe = ig.lift_to_euclidean(sq(2), vf.grushin(BIG))
        assert ig.evaluate(fe, np.array([2.0, 5.0]), [1, 1]) == pytest.approx(5)
        assert fe.kind == "quadratic"
        assert np.allclose(fe.a(np.array([2.0, 5.0])), np.diag([1, 4]))

    def test_euclidean(self):
        fe = ig.lift_to_euclidean(sq(3), vf.euclidean(3))
        xi = np.array([0.3, -1.0, 2.0])
        assert fe(np.zeros(3), xi) == pytest.approx(xi @ xi)

    def test_heisenberg_kernel(self):
        fe = ig.lift_to_euclidean(sq(2), vf.heisenberg())
        assert fe(ORIGIN3, np.array([0.0, 0.0, 1.0])) == 0

    def test_arity_mismatch(self):
        with pytest.raises(ArgumentError):
            ig.lift_to_euclidean(sq(3), vf.grushin())

    def test_symbolic(self):
        f = ig.from_expression("eta1^2+eta2^2", 2, 2)
        fe = ig.lift_to_euclidean(f, vf.grushin())
        assert str(fe.symbolic) == "x1**2*xi2**2 + xi1**2"


class TestLower:
    def test_heisenberg_origin(self):
        f = ig.lower_to_x(sq(3), vf.heisenberg())
        assert ig.evaluate(f, ORIGIN3, [3, 4]) == pytest.approx(25)

    def test_round_trip_point(self):
        fam = vf.grushin(BIG)
        f = ig.lower_to_x(ig.lift_to_euclidean(sq(2), fam), fam)
        assert f(np.array([2.0, 0.0]), np.array([1.0, 2.0])) == pytest.approx(5)

    def test_degenerate_zero_branch(self):
        f = ig.lower_to_x(sq(2), vf.grushin())
        assert f(np.array([0.0, 0.4]), np.array([3.0, -2.0])) == 0

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.05, 1), st.floats(-1, 1), st.floats(-3, 3), st.floats(-3, 3))
    def test_round_trip_property(self, x1, x2, e1, e2):
        fam = vf.grushin()
        f = ig.from_expression("(1+x2^2)*eta1^2 + eta2^4 + x1*eta1*eta2 + 2*eta2^2", 2, 2, p=4)
        back = ig.lower_to_x(ig.lift_to_euclidean(f, fam), fam)
        x, eta = np.array([x1, x2]), np.array([e1, e2])
        assert abs(back(x, eta) - f(x, eta)) <= 1e-12 * (1 + abs(f(x, eta)))


class TestCompatibility:
    def test_counterexample(self):
        rep = ig.compatibility_check(sq(3), vf.heisenberg(), ig.SampleSpec(ORIGIN3, [0, 0, 1]))
        assert not rep.passed
        assert rep.worst_residual == 1.0
        x, xi = rep.worst_witness
        assert np.array_equal(x, ORIGIN3) and np.array_equal(xi, [0, 0, 1])

    def test_lifted_passes(self):
        fam = vf.grushin()
        rep = ig.compatibility_check(ig.lift_to_euclidean(sq(2), fam), fam)
        assert rep.passed
        assert rep.skipped == 17  # the x1 = 0 lattice column

    def test_square_family_any_integrand(self):
        fe = ig.from_expression("xi1^4 + x2*xi1*xi2 + 3*xi2^2", 2, 2, euclidean=True, p=4)
        assert ig.compatibility_check(fe, vf.euclidean(2)).passed

    def test_heisenberg_lift_passes(self):
        fam = vf.heisenberg()
        assert ig.compatibility_check(ig.lift_to_euclidean(ig.power(2, 3.0), fam), fam).passed


class TestBounds:
    def test_unit(self):
        s = ig.default_samples(vf.Box.cube(2), 2)
        assert ig.class_bounds_check(sq(2), s).passed

    def test_upper_violation(self):
        s = ig.default_samples(vf.Box.cube(2), 2)
        f = replace(ig.power(2, 2.0, 2.0), c0=1.0, c1=1.0)
        rep = ig.class_bounds_check(f, s)
        assert not rep.passed
        assert np.linalg.norm(rep.worst_witness[1]) >= 1

    def test_x_dependent(self):
        f = ig.from_expression("(1+x1^2)*(eta1^2+eta2^2)", 2, 2, c0=1, c1=2)
        assert ig.class_bounds_check(f, ig.default_samples(vf.Box.cube(2), 2)).passed

    def test_lifted_growth(self):
        fam = vf.heisenberg()
        f = ig.from_expression("(1+x1^2)*(eta1^2+eta2^2)", 2, 3, c0=1, c1=2)
        fe = ig.lift_to_euclidean(f, fam)
        assert ig.class_bounds_check(fe, ig.default_samples(fam.domain, 3, per_axis=5)).passed


class TestConvexity:
    def test_power(self):
        s = ig.default_samples(vf.Box.cube(2), 2)
        assert ig.convexity_check(ig.power(2, 3.0), s).passed

    def test_concave(self):
        s = ig.default_samples(vf.Box.cube(2), 2)
        f = ig.autonomous(lambda v: -np.sum(v * v, -1), 2)
        assert not ig.convexity_check(f, s).passed

    def test_indefinite_quadratic(self):
        s = ig.default_samples(vf.Box.cube(2), 2)
        rep = ig.convexity_check(ig.quadratic([[1, 2], [2, 1]]), s)
        assert not rep.passed
        assert any("-1.000000e+00" in w for w in rep.warnings)

    @pytest.mark.parametrize("fam", [vf.grushin(), vf.heisenberg()])
    def test_preserved_by_lift_and_lower(self, fam):
        f = ig.from_expression("eta1^4 + (eta1-eta2)^2", 2, fam.n, p=4)
        fe = ig.lift_to_euclidean(f, fam)
        s = ig.default_samples(fam.domain, fam.n, per_axis=5)
        assert ig.convexity_check(fe, s).passed
        low = ig.lower_to_x(fe, fam)
        assert ig.convexity_check(low, ig.default_samples(fam.domain, 2, per_axis=5)).passed


class TestPushforward:
    def test_euclidean(self):
        a_e = np.array([[2.0, 0.5], [0.5, 1.0]])
        assert np.array_equal(ig.quadratic_pushforward(a_e, vf.euclidean(2), [0.1, 0.2]), a_e)

    def test_heisenberg(self):
        assert np.allclose(ig.quadratic_pushforward(np.eye(3), vf.heisenberg(), ORIGIN3), np.eye(2))

    def test_grushin(self):
        a = ig.quadratic_pushforward(np.eye(2), vf.grushin(BIG), [2, 0])
        assert np.allclose(a, np.diag([1, 0.25]))

    def test_singular(self):
        with pytest.raises(SingularityError):
            ig.quadratic_pushforward(np.eye(2), vf.grushin(), [0, 0])

    def test_consistency_with_lower(self):
        fam = vf.heisenberg()
        a_e = np.array([[2, 0.3, 0.1], [0.3, 1, -0.2], [0.1, -0.2, 3]])
        pts = np.random.default_rng(4).uniform(-1, 1, (50, 3))
        assert ig.pushforward_consistency(a_e, fam, pts) <= 1e-10


class TestUniqueness:
    def test_same(self):
        assert ig.representation_uniqueness_check(sq(2), sq(2), vf.grushin()).passed

    def test_lic_failure_warns(self):
        fam = vf.custom([["1", "0"], ["0", "0"]], 2)
        g = ig.from_expression("eta1^2+2*eta2^2", 2, 2)
        rep = ig.representation_uniqueness_check(sq(2), g, fam)
        assert rep.passed
        assert rep.warnings and "linear independence" in rep.warnings[0]

    def test_different(self):
        rep = ig.representation_uniqueness_check(sq(2), ig.power(2, 2.0, 2.0), vf.euclidean(2))
        assert not rep.passed
