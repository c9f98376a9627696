"""Generator, hat/vee, exp/log, adjoint, and similarity-transform tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sl4slam import lie_groups as lg
from sl4slam.errors import DegenerateConfiguration, LogDomainError, PointAtInfinity


def random_tangent(rng, bound=0.5):
    return rng.uniform(-bound, bound, size=15)


def taylor_expm(m, terms=20):
    """Independent series oracle: sum_k m^k / k! truncated at `terms`."""
    total = np.eye(4)
    term = np.eye(4)
    for k in range(1, terms + 1):
        term = term @ m / k
        total = total + term
    return total


class TestGenerators:
    def test_count_and_shapes(self):
        gens = lg.generators()
        assert len(gens) == 15
        assert all(g.shape == (4, 4) for g in gens)

    def test_first_generator_is_e01(self):
        expected = np.zeros((4, 4))
        expected[0, 1] = 1.0
        np.testing.assert_array_equal(lg.generators()[0], expected)

    def test_off_diagonal_generators_have_single_unit_entry(self):
        for g in lg.generators()[:12]:
            assert np.count_nonzero(g) == 1
            assert g.sum() == 1.0

    def test_diagonal_generators(self):
        gens = lg.generators()
        np.testing.assert_array_equal(gens[12], np.diag([1.0, -1.0, 0.0, 0.0]))
        np.testing.assert_array_equal(gens[13], np.diag([0.0, 1.0, -1.0, 0.0]))
        np.testing.assert_array_equal(gens[14], np.diag([0.0, 0.0, 1.0, -1.0]))

    def test_all_trace_free(self):
        for g in lg.generators():
            assert np.trace(g) == 0.0

    def test_linearly_independent(self):
        stack = np.stack([g.ravel() for g in lg.generators()])
        assert np.linalg.matrix_rank(stack) == 15

    def test_pinv_left_inverse(self):
        prod = lg.SL4_BASIS.pinv @ lg.SL4_BASIS.stacked
        np.testing.assert_allclose(prod, np.eye(15), atol=1e-12)


class TestHatVee:
    def test_hat_zero(self):
        np.testing.assert_array_equal(lg.hat(np.zeros(15)), np.zeros((4, 4)))

    def test_hat_unit_diagonal_slot(self):
        xi = np.zeros(15)
        xi[12] = 1.0
        np.testing.assert_array_equal(lg.hat(xi), np.diag([1.0, -1.0, 0.0, 0.0]))

    def test_hat_matches_generator_sum(self):
        rng = np.random.default_rng(7)
        gens = np.stack(lg.generators())
        for _ in range(20):
            xi = random_tangent(rng, 2.0)
            np.testing.assert_allclose(
                lg.hat(xi), np.tensordot(xi, gens, axes=1), atol=1e-15
            )

    def test_vee_hat_roundtrip(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            xi = random_tangent(rng, 3.0)
            back = lg.vee(lg.hat(xi))
            # Off-diagonal slots are read back verbatim; the three diagonal
            # slots cross one rounding each.
            np.testing.assert_array_equal(back[:12], xi[:12])
            np.testing.assert_allclose(back, xi, rtol=0, atol=1e-14)

    def test_hat_vee_roundtrip_on_traceless(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            m = rng.standard_normal((4, 4))
            m -= np.trace(m) / 4.0 * np.eye(4)
            np.testing.assert_allclose(lg.hat(lg.vee(m)), m, rtol=0, atol=1e-14)

    def test_vee_rejects_traceful_matrix(self):
        with pytest.raises(ValueError, match="trace"):
            lg.vee(np.eye(4))

    @given(st.integers(0, 14), st.floats(-2.0, 2.0, allow_nan=False))
    @settings(max_examples=40, deadline=None)
    def test_hat_is_linear_in_each_slot(self, slot, value):
        xi = np.zeros(15)
        xi[slot] = value
        np.testing.assert_allclose(lg.hat(xi), value * lg.generators()[slot], atol=0)


class TestExpLog:
    def test_exp_zero_is_identity(self):
        np.testing.assert_allclose(lg.exp_sl4(np.zeros(15)).m, np.eye(4), atol=1e-15)

    def test_exp_diagonal_slot(self):
        t = 0.37
        xi = np.zeros(15)
        xi[12] = t
        expected = np.diag([np.exp(t), np.exp(-t), 1.0, 1.0])
        np.testing.assert_allclose(lg.exp_sl4(xi).m, expected, atol=1e-12)

    def test_exp_matches_taylor_series(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            xi = random_tangent(rng, 0.1)
            np.testing.assert_allclose(
                lg.exp_sl4(xi).m, taylor_expm(lg.hat(xi)), atol=1e-12
            )

    def test_exp_has_unit_determinant(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            h = lg.exp_sl4(random_tangent(rng, 1.0))
            assert abs(np.linalg.det(h.m) - 1.0) < 1e-9

    def test_log_identity_is_zero(self):
        np.testing.assert_array_equal(lg.log_sl4(Hid()), np.zeros(15))

    def test_log_diagonal(self):
        h = lg.Homography(np.diag([np.e, 1.0 / np.e, 1.0, 1.0]))
        expected = np.zeros(15)
        expected[12] = 1.0
        np.testing.assert_allclose(lg.log_sl4(h), expected, atol=1e-12)

    def test_log_exp_roundtrip(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            xi = random_tangent(rng, 0.5)
            np.testing.assert_allclose(lg.log_sl4(lg.exp_sl4(xi)), xi, atol=1e-9)

    def test_exp_log_roundtrip(self):
        rng = np.random.default_rng(19)
        for _ in range(50):
            h = lg.exp_sl4(random_tangent(rng, 0.6))
            np.testing.assert_allclose(
                lg.exp_sl4(lg.log_sl4(h)).m, h.m, atol=1e-8
            )

    def test_log_rejects_negative_real_eigenvalue(self):
        m = np.diag([-1.0, -1.0, 1.0, 1.0])
        with pytest.raises(LogDomainError):
            lg.log_sl4(lg.Homography(m))


class TestAdjoint:
    def test_adjoint_of_identity(self):
        np.testing.assert_allclose(lg.adjoint(Hid()), np.eye(15), atol=1e-12)

    def test_conjugation_identity(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            h = lg.exp_sl4(random_tangent(rng, 0.8))
            xi = random_tangent(rng, 1.0)
            lhs = lg.hat(lg.adjoint(h) @ xi)
            rhs = h.m @ lg.hat(xi) @ np.linalg.inv(h.m)
            np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_homomorphism(self):
        rng = np.random.default_rng(29)
        for _ in range(50):
            h1 = lg.exp_sl4(random_tangent(rng, 0.5))
            h2 = lg.exp_sl4(random_tangent(rng, 0.5))
            np.testing.assert_allclose(
                lg.adjoint(h1 @ h2), lg.adjoint(h1) @ lg.adjoint(h2), atol=1e-9
            )

    def test_inverse_identity(self):
        rng = np.random.default_rng(31)
        for _ in range(50):
            h = lg.exp_sl4(random_tangent(rng, 0.5))
            np.testing.assert_allclose(
                lg.adjoint(h.inverse()), np.linalg.inv(lg.adjoint(h)), atol=1e-9
            )

    def test_algebra_adjoint_matches_bracket(self):
        rng = np.random.default_rng(37)
        for _ in range(20):
            xi = random_tangent(rng, 1.0)
            eta = random_tangent(rng, 1.0)
            bracket = lg.hat(xi) @ lg.hat(eta) - lg.hat(eta) @ lg.hat(xi)
            np.testing.assert_allclose(
                lg.hat(lg.algebra_adjoint(xi) @ eta), bracket, atol=1e-12
            )

    def test_inv_right_jacobian_first_order(self):
        # Log(Exp(xi) Exp(delta)) ~ xi + Jr^-1(xi) delta for small delta.
        rng = np.random.default_rng(41)
        for _ in range(10):
            xi = random_tangent(rng, 0.4)
            delta = rng.uniform(-1, 1, size=15) * 1e-6
            perturbed = lg.Homography.from_matrix(lg.exp_sl4(xi).m @ lg.exp_sl4(delta).m)
            lhs = lg.log_sl4(perturbed) - xi
            rhs = lg.inv_right_jacobian(xi) @ delta
            np.testing.assert_allclose(lhs, rhs, atol=1e-11)


class TestHomographyType:
    def test_rejects_non_unit_determinant(self):
        with pytest.raises(ValueError, match="determinant"):
            lg.Homography(2.0 * np.eye(4))

    def test_rejects_non_finite(self):
        m = np.eye(4)
        m[0, 0] = np.nan
        with pytest.raises(ValueError, match="finite"):
            lg.Homography(m)

    def test_from_matrix_normalizes(self):
        h = lg.Homography.from_matrix(3.0 * np.eye(4))
        assert abs(np.linalg.det(h.m) - 1.0) < 1e-12

    def test_from_matrix_rejects_negative_determinant(self):
        with pytest.raises(ValueError):
            lg.Homography.from_matrix(np.diag([-1.0, 1.0, 1.0, 1.0]))

    def test_immutable(self):
        h = Hid()
        with pytest.raises(AttributeError):
            h.m = np.zeros((4, 4))
        with pytest.raises(ValueError):
            h.m[0, 0] = 2.0

    def test_apply_point_at_infinity(self):
        m = np.eye(4)
        m[3, :] = [1.0, 0.0, 0.0, 0.0]
        m[0, :] = [0.0, 0.0, 0.0, 1.0]
        with pytest.raises(PointAtInfinity):
            lg.transform_points(m, np.array([[0.0, 1.0, 1.0]]))


class TestSim3:
    def test_identity_apply(self):
        pts = np.random.default_rng(0).standard_normal((5, 3))
        np.testing.assert_array_equal(lg.Sim3Transform.identity().apply(pts), pts)

    def test_compose_inverse(self):
        rng = np.random.default_rng(43)
        t1 = random_sim3(rng)
        t2 = random_sim3(rng)
        pts = rng.standard_normal((10, 3))
        np.testing.assert_allclose(
            t1.compose(t2).apply(pts), t1.apply(t2.apply(pts)), atol=1e-12
        )
        np.testing.assert_allclose(
            t1.inverse().apply(t1.apply(pts)), pts, atol=1e-12
        )

    def test_promotion_preserves_point_action(self):
        rng = np.random.default_rng(47)
        t = random_sim3(rng)
        pts = rng.standard_normal((10, 3))
        np.testing.assert_allclose(
            t.to_homography().apply(pts), t.apply(pts), atol=1e-10
        )

    def test_similarity_from_matrix_roundtrip(self):
        rng = np.random.default_rng(53)
        t = random_sim3(rng)
        back = lg.similarity_from_matrix(t.to_homography().m)
        assert back is not None
        np.testing.assert_allclose(back.rotation, t.rotation, atol=1e-9)
        np.testing.assert_allclose(back.scale, t.scale, atol=1e-9)
        np.testing.assert_allclose(back.translation, t.translation, atol=1e-9)

    def test_similarity_from_matrix_rejects_projective(self):
        xi = np.zeros(15)
        xi[9] = 0.3  # a perspective slot (bottom-row generator)
        assert lg.similarity_from_matrix(lg.exp_sl4(xi).m) is None

    def test_rejects_improper_rotation(self):
        with pytest.raises(ValueError):
            lg.Sim3Transform(1.0, np.diag([1.0, 1.0, -1.0]), np.zeros(3))


class TestUmeyama:
    def test_identity_on_equal_sets(self):
        pts = np.random.default_rng(1).standard_normal((20, 3))
        t = lg.umeyama_align(pts, pts)
        np.testing.assert_allclose(t.rotation, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(t.scale, 1.0, atol=1e-12)
        np.testing.assert_allclose(t.translation, np.zeros(3), atol=1e-9)

    def test_recovers_known_similarity(self):
        rng = np.random.default_rng(59)
        truth = random_sim3(rng, scale=2.0)
        src = rng.standard_normal((30, 3))
        dst = truth.apply(src)
        t = lg.umeyama_align(src, dst, with_scale=True)
        np.testing.assert_allclose(t.scale, truth.scale, atol=1e-9)
        np.testing.assert_allclose(t.rotation, truth.rotation, atol=1e-9)
        np.testing.assert_allclose(t.translation, truth.translation, atol=1e-9)

    def test_without_scale_pins_scale(self):
        rng = np.random.default_rng(61)
        src = rng.standard_normal((25, 3))
        dst = 2.0 * src
        t = lg.umeyama_align(src, dst, with_scale=False)
        assert t.scale == 1.0
        assert np.linalg.norm(t.apply(src) - dst) > 1.0

    def test_collinear_raises(self):
        src = np.outer(np.linspace(0, 1, 10), np.array([1.0, 2.0, 3.0]))
        with pytest.raises(DegenerateConfiguration):
            lg.umeyama_align(src, src + 1.0)


class TestSim3Group:
    def test_exp_log_roundtrip(self):
        rng = np.random.default_rng(67)
        for _ in range(30):
            xi = rng.uniform(-0.5, 0.5, size=7)
            np.testing.assert_allclose(
                lg.SIM3_GROUP.log(lg.SIM3_GROUP.exp(xi)), xi, atol=1e-9
            )

    def test_exp_lands_on_similarity(self):
        rng = np.random.default_rng(71)
        for _ in range(10):
            m = lg.SIM3_GROUP.exp(rng.uniform(-0.5, 0.5, size=7))
            assert lg.similarity_from_matrix(m) is not None

    def test_adjoint_conjugation(self):
        rng = np.random.default_rng(73)
        for _ in range(20):
            m = lg.SIM3_GROUP.exp(rng.uniform(-0.5, 0.5, size=7))
            xi = rng.uniform(-1, 1, size=7)
            hx = np.tensordot(xi, lg.SIM3_BASIS.generators, axes=1)
            lhs = np.tensordot(
                lg.SIM3_GROUP.adjoint(m) @ xi, lg.SIM3_BASIS.generators, axes=1
            )
            np.testing.assert_allclose(lhs, m @ hx @ np.linalg.inv(m), atol=1e-10)


def Hid():
    return lg.Homography.identity()


def random_sim3(rng, scale=None):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    rot = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
    s = scale if scale is not None else float(np.exp(rng.uniform(-0.5, 0.5)))
    return lg.Sim3Transform(s, rot, rng.standard_normal(3))
