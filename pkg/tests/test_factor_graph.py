"""Residual, Jacobian-oracle, and Levenberg-Marquardt solver tests."""

import numpy as np
import pytest

from sl4slam import factor_graph as fg
from sl4slam import lie_groups as lg
from sl4slam.errors import DisconnectedGraph, LogDomainError, SingularNormalEquations


def random_h(rng, bound=0.3):
    return lg.exp_sl4(rng.uniform(-bound, bound, size=15))


def finite_difference_jacobian(func, eps=1e-6):
    """Central differences of a 15-vector function of a 15-vector."""
    cols = []
    for k in range(15):
        delta = np.zeros(15)
        delta[k] = eps
        cols.append((func(delta) - func(-delta)) / (2 * eps))
    return np.stack(cols, axis=1)


class TestResidual:
    def test_identity_chain_zero(self):
        values = {0: lg.Homography.identity(), 1: lg.Homography.identity()}
        f = fg.BetweenFactor(0, 1, lg.Homography.identity(), np.eye(15))
        np.testing.assert_array_equal(fg.residual(f, values), np.zeros(15))

    def test_consistent_pair_zero(self):
        rng = np.random.default_rng(0)
        xi = rng.uniform(-0.4, 0.4, 15)
        values = {0: lg.Homography.identity(), 1: lg.exp_sl4(xi)}
        f = fg.BetweenFactor(0, 1, lg.exp_sl4(xi), np.eye(15))
        np.testing.assert_allclose(fg.residual(f, values), np.zeros(15), atol=1e-12)

    def test_perturbation_is_adjoint_transported(self):
        # Perturbing the j side of a consistent pair by Exp(delta) shows up
        # in the residual transported by the adjoint of the measurement.
        rng = np.random.default_rng(1)
        for _ in range(10):
            h_i = random_h(rng)
            measured = random_h(rng)
            h_j = h_i @ measured
            delta = rng.uniform(-1, 1, 15) * 1e-5
            values = {0: h_i, 1: h_j @ lg.exp_sl4(delta)}
            f = fg.BetweenFactor(0, 1, measured, np.eye(15))
            expected = lg.adjoint(measured) @ delta
            np.testing.assert_allclose(fg.residual(f, values), expected, atol=1e-8)

    def test_log_domain_error_names_factor(self):
        flip = lg.Homography(np.diag([-1.0, -1.0, 1.0, 1.0]))
        values = {0: lg.Homography.identity(), 1: flip}
        f = fg.BetweenFactor(0, 1, lg.Homography.identity(), np.eye(15))
        with pytest.raises(LogDomainError, match=r"factor \(0, 1\)"):
            fg.residual(f, values)


class TestLinearize:
    def test_identity_configuration(self):
        values = {0: lg.Homography.identity(), 1: lg.Homography.identity()}
        f = fg.BetweenFactor(0, 1, lg.Homography.identity(), np.eye(15))
        j_i, j_j, e = fg.linearize(f, values)
        np.testing.assert_allclose(j_i, -np.eye(15), atol=1e-12)
        np.testing.assert_allclose(j_j, np.eye(15), atol=1e-12)
        np.testing.assert_array_equal(e, np.zeros(15))

    def test_matches_finite_differences(self):
        # smoke-level here; the acceptance suite runs the full 100 configs
        rng = np.random.default_rng(2)
        for _ in range(25):
            h_i = random_h(rng, 0.4)
            h_j = random_h(rng, 0.4)
            measured = random_h(rng, 0.4)
            values = {0: h_i, 1: h_j}
            f = fg.BetweenFactor(0, 1, measured, np.eye(15))
            j_i, j_j, _ = fg.linearize(f, values)

            def res_i(d):
                vals = {0: lg.Homography.from_matrix(h_i.m @ lg.exp_sl4(d).m), 1: h_j}
                return fg.residual(f, vals)

            def res_j(d):
                vals = {0: h_i, 1: lg.Homography.from_matrix(h_j.m @ lg.exp_sl4(d).m)}
                return fg.residual(f, vals)

            np.testing.assert_allclose(
                finite_difference_jacobian(res_i), j_i, atol=1e-5
            )
            np.testing.assert_allclose(
                finite_difference_jacobian(res_j), j_j, atol=1e-5
            )

    def test_j_j_is_identity_at_consistency_with_identity_measurement(self):
        values = {0: random_h(np.random.default_rng(3)), 1: None}
        values[1] = values[0]
        f = fg.BetweenFactor(0, 1, lg.Homography.identity(), np.eye(15))
        _, j_j, _ = fg.linearize(f, values)
        np.testing.assert_allclose(j_j, np.eye(15), atol=1e-12)


class TestTotalCost:
    def test_consistent_graph_zero(self):
        rng = np.random.default_rng(4)
        graph = fg.FactorGraph()
        values = {0: lg.Homography.identity()}
        for k in range(4):
            step = random_h(rng)
            values[k + 1] = values[k] @ step
            graph.add_between(k, k + 1, step)
        graph.add_prior(0, lg.Homography.identity())
        assert fg.total_cost(graph, values) < 1e-18

    def test_single_factor_cost_is_squared_norm(self):
        rng = np.random.default_rng(5)
        h_j = random_h(rng)
        values = {0: lg.Homography.identity(), 1: h_j}
        graph = fg.FactorGraph()
        f = graph.add_between(0, 1, lg.Homography.identity())
        e = fg.residual(f, values)
        np.testing.assert_allclose(fg.total_cost(graph, values), e @ e, rtol=1e-12)


class TestOptimize:
    def test_truth_init_converges_immediately(self):
        rng = np.random.default_rng(6)
        graph = fg.FactorGraph()
        values = {0: lg.Homography.identity()}
        for k in range(2):
            step = random_h(rng)
            values[k + 1] = values[k] @ step
            graph.add_between(k, k + 1, step)
        graph.add_prior(0, lg.Homography.identity())
        out, report = fg.optimize_lm(graph, values)
        assert report.iterations <= 1
        assert report.final_cost < 1e-18

    def test_ten_node_chain_from_identity(self):
        rng = np.random.default_rng(7)
        graph = fg.FactorGraph()
        truth = {0: lg.Homography.identity()}
        init = {0: lg.Homography.identity()}
        for k in range(9):
            step = random_h(rng, 0.3)
            truth[k + 1] = truth[k] @ step
            init[k + 1] = lg.Homography.identity()
            graph.add_between(k, k + 1, step)
        graph.add_prior(0, lg.Homography.identity())
        out, report = fg.optimize_lm(graph, init)
        assert report.iterations <= 25
        for k in range(10):
            np.testing.assert_allclose(out[k].m, truth[k].m, atol=1e-6)

    def test_inconsistent_loop_distributes_defect(self):
        rng = np.random.default_rng(8)
        steps = [random_h(rng, 0.25) for _ in range(3)]
        closure_truth = (steps[0] @ steps[1] @ steps[2]).inverse()
        defect = lg.exp_sl4(rng.uniform(-0.02, 0.02, 15))
        closure_measured = closure_truth @ defect

        graph = fg.FactorGraph()
        for k, step in enumerate(steps):
            graph.add_between(k, k + 1, step)
        graph.add_between(3, 0, closure_measured)
        graph.add_prior(0, lg.Homography.identity())

        chained = {0: lg.Homography.identity()}
        for k, step in enumerate(steps):
            chained[k + 1] = chained[k] @ step
        chained_cost = fg.total_cost(graph, chained)

        out, report = fg.optimize_lm(graph, chained)
        assert report.final_cost < chained_cost
        residnorms = [np.linalg.norm(fg.residual(f, out)) for f in graph.between]
        assert max(residnorms) < np.linalg.norm(lg.log_sl4(defect))

    def test_accepted_costs_non_increasing(self):
        rng = np.random.default_rng(9)
        graph = fg.FactorGraph()
        init = {0: lg.Homography.identity()}
        for k in range(5):
            graph.add_between(k, k + 1, random_h(rng, 0.3))
            init[k + 1] = lg.Homography.identity()
        graph.add_prior(0, lg.Homography.identity())
        _, report = fg.optimize_lm(graph, init)
        accepted = [c for ok, c in report.history if ok]
        assert all(b <= a for a, b in zip(accepted, accepted[1:]))

    def test_determinant_preserved(self):
        rng = np.random.default_rng(10)
        graph = fg.FactorGraph()
        init = {0: lg.Homography.identity()}
        for k in range(6):
            graph.add_between(k, k + 1, random_h(rng, 0.4))
            init[k + 1] = lg.Homography.identity()
        graph.add_prior(0, lg.Homography.identity())
        out, _ = fg.optimize_lm(graph, init)
        for h in out.values():
            assert abs(np.linalg.det(h.m) - 1.0) < 1e-8

    def test_missing_prior_raises(self):
        graph = fg.FactorGraph()
        graph.add_between(0, 1, lg.Homography.identity())
        init = {0: lg.Homography.identity(), 1: lg.Homography.identity()}
        with pytest.raises(SingularNormalEquations):
            fg.optimize_lm(graph, init)

    def test_nonconvergence_is_flagged_not_raised(self):
        rng = np.random.default_rng(11)
        graph = fg.FactorGraph()
        init = {0: lg.Homography.identity(), 1: lg.Homography.identity()}
        graph.add_between(0, 1, random_h(rng))
        graph.add_prior(0, lg.Homography.identity())
        _, report = fg.optimize_lm(graph, init, fg.LmConfig(max_iters=1))
        assert not report.converged
        assert report.status in ("max_iters", "stalled")


class TestGraphStructure:
    def test_connectivity_check(self):
        graph = fg.FactorGraph()
        graph.add_between(0, 1, lg.Homography.identity())
        graph.add_between(2, 3, lg.Homography.identity())
        with pytest.raises(DisconnectedGraph):
            graph.check_connected(0)

    def test_information_must_be_symmetric(self):
        info = np.eye(15)
        info[0, 1] = 1e-3
        with pytest.raises(ValueError, match="symmetric"):
            fg.BetweenFactor(0, 1, lg.Homography.identity(), info)

    def test_self_edge_rejected(self):
        with pytest.raises(ValueError):
            fg.BetweenFactor(2, 2, lg.Homography.identity(), np.eye(15))

    def test_dump_graph_format(self):
        graph = fg.FactorGraph()
        graph.add_between(0, 1, lg.Homography.identity())
        graph.add_prior(0, lg.Homography.identity())
        values = {0: lg.Homography.identity(), 1: lg.Homography.identity()}
        dump = fg.dump_graph(graph, values)
        lines = dump.strip().split("\n")
        assert lines[0].startswith("node 0")
        assert any(line.startswith("between 0 1") for line in lines)
        assert any(line.startswith("prior 0") for line in lines)


class TestSim3Solve:
    def _random_sim3(self, rng, bound=0.4):
        xi = rng.uniform(-bound, bound, 7)
        m = lg.SIM3_GROUP.exp(xi)
        return lg.similarity_from_matrix(m)

    def test_consistent_chain(self):
        rng = np.random.default_rng(12)
        truth = {0: lg.Sim3Transform.identity()}
        between = []
        init = {0: lg.Sim3Transform.identity()}
        for k in range(5):
            step = self._random_sim3(rng)
            truth[k + 1] = truth[k].compose(step)
            init[k + 1] = lg.Sim3Transform.identity()
            between.append(fg.Sim3BetweenFactor(k, k + 1, step, np.eye(7)))
        priors = [fg.Sim3PriorFactor(0, lg.Sim3Transform.identity(), 1e6 * np.eye(7))]
        out, report = fg.optimize_sim3_graph(between, priors, init)
        assert report.final_cost < 1e-12
        for k in range(6):
            np.testing.assert_allclose(
                out[k].to_matrix(), truth[k].to_matrix(), atol=1e-6
            )

    def test_baseline_equivalence_with_promoted_measurements(self):
        # Similarity-only measurements solved on the projective manifold
        # agree with the dedicated similarity solve.
        rng = np.random.default_rng(13)
        steps = [self._random_sim3(rng) for _ in range(5)]

        graph = fg.FactorGraph()
        init_h = {0: lg.Homography.identity()}
        between_s = []
        init_s = {0: lg.Sim3Transform.identity()}
        for k, step in enumerate(steps):
            graph.add_between(k, k + 1, step.to_homography())
            between_s.append(fg.Sim3BetweenFactor(k, k + 1, step, np.eye(7)))
            init_h[k + 1] = lg.Homography.identity()
            init_s[k + 1] = lg.Sim3Transform.identity()
        graph.add_prior(0, lg.Homography.identity())
        priors_s = [fg.Sim3PriorFactor(0, lg.Sim3Transform.identity(), 1e6 * np.eye(7))]

        out_h, _ = fg.optimize_lm(graph, init_h)
        out_s, _ = fg.optimize_sim3_graph(between_s, priors_s, init_s)

        probe = rng.standard_normal((20, 3))
        for k in range(6):
            traj_h = out_h[k].apply(probe)
            traj_s = out_s[k].apply(probe)
            assert np.abs(traj_h - traj_s).max() < 1e-5
