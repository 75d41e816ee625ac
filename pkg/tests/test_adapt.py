import numpy as np
import pytest

from clusterdiff.adapt import (AdaptConfig, ConvergenceError, atc_step, centralized_descent, initial_state,
                               lms_step, multitask_step, p2_gradient, project_simplex, rmse,
                               single_task_step, unmix_step)
from clusterdiff.synth import Sample
from clusterdiff.theory import assemble, asymptotic_bias
from clusterdiff.topology import ClusteredNetwork, CombinerSet, single_cluster, uniform_combiners

from oracles import atc_loop, p2_equilibrium, random_problem


def one_node():
    net = ClusteredNetwork.from_edges(1, [], [(0,)])
    return net, CombinerSet([[1.0]], [[1.0]], [[0.0]], {0})


class TestConfig:
    @pytest.mark.parametrize("mu, eta", [(0.0, 0.1), (-1.0, 0.0), (0.1, -0.5)])
    def test_rejects(self, mu, eta):
        with pytest.raises(ValueError):
            AdaptConfig(mu, eta)

    def test_initial_state(self):
        st = initial_state(3, 2)
        assert not st.w.any() and st.w.shape == (3, 2)


class TestHandCases:
    def test_atc_single_node(self):
        net, comb = one_node()
        st = atc_step(initial_state(1, 1), Sample(np.array([[2.0]]), np.array([4.0])), net, comb,
                      AdaptConfig(0.1, 0.0))
        assert st.psi[0, 0] == pytest.approx(0.8) and st.w[0, 0] == pytest.approx(0.8)

    def test_single_task_single_node(self):
        net, comb = one_node()
        st = single_task_step(initial_state(1, 1), Sample(np.array([[2.0]]), np.array([4.0])), net, comb,
                              AdaptConfig(0.1, 0.0))
        assert st.w[0, 0] == pytest.approx(0.8)

    def test_multitask_two_nodes(self):
        net = ClusteredNetwork.from_edges(2, [(0, 1)], [(0,), (1,)])
        comb = CombinerSet(np.eye(2), np.eye(2), [[0.0, 1.0], [1.0, 0.0]])
        st = initial_state(2, 1, w0=[[1.0], [0.0]])
        out = multitask_step(st, Sample(np.array([[0.0], [0.0]]), np.array([0.0, 0.0])), net, comb,
                             AdaptConfig(1.0, 1.0))
        assert out.w[0, 0] == 0.0


class TestAgainstLoop:
    def test_random_networks(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            net, comb, env = random_problem(rng)
            w = rng.standard_normal(env.w_star.shape)
            x, d = env.draw_block(rng, 1)
            mu, eta = rng.uniform(0.01, 0.5), rng.uniform(0, 2)
            st = atc_step(initial_state(net.n_nodes, env.dim, w), Sample(x[0], d[0]), net, comb,
                          AdaptConfig(mu, eta))
            ref_w, ref_psi = atc_loop(w, x[0], d[0], net, comb, mu, eta)
            np.testing.assert_allclose(st.psi, ref_psi, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(st.w, ref_w, rtol=1e-12, atol=1e-12)

    def test_batched_matches_single(self):
        rng = np.random.default_rng(4)
        net, comb, env = random_problem(rng, n_max=6)
        from clusterdiff.adapt import atc_update
        w = rng.standard_normal((5,) + env.w_star.shape)
        x = rng.standard_normal(w.shape)
        d = rng.standard_normal(w.shape[:2])
        batch, _ = atc_update(w, x, d, comb.A, comb.C, comb.P, 0.1, 0.3)
        for t in range(5):
            one, _ = atc_update(w[t], x[t], d[t], comb.A, comb.C, comb.P, 0.1, 0.3)
            np.testing.assert_allclose(batch[t], one, rtol=1e-14, atol=1e-15)


class TestReductions:
    def test_eta_scale(self):
        rng = np.random.default_rng(5)
        net = ClusteredNetwork.from_edges(3, [(0, 1), (1, 2)], [(0,), (1,), (2,)])
        comb = uniform_combiners(net)
        w = rng.standard_normal((3, 2))
        s = Sample(rng.standard_normal((3, 2)), rng.standard_normal(3))
        a = multitask_step(initial_state(3, 2, w), s, net, comb, AdaptConfig(0.1, 0.4))
        half = comb.replace(P=comb.P / 2)
        b = multitask_step(initial_state(3, 2, w), s, net, half, AdaptConfig(0.1, 0.8))
        np.testing.assert_allclose(a.w, b.w, rtol=1e-14)

    def test_identity_single_task_is_lms(self):
        rng = np.random.default_rng(6)
        net = ClusteredNetwork.from_edges(3, [(0, 1), (1, 2)], [(0, 1, 2)])
        comb = CombinerSet(np.eye(3), np.eye(3), np.zeros((3, 3)))
        w = rng.standard_normal((3, 2))
        s = Sample(rng.standard_normal((3, 2)), rng.standard_normal(3))
        a = single_task_step(initial_state(3, 2, w), s, net, comb, AdaptConfig(0.2))
        b = lms_step(initial_state(3, 2, w), s, AdaptConfig(0.2))
        np.testing.assert_array_equal(a.w, b.w)

    def test_multitask_eta0_is_lms(self):
        rng = np.random.default_rng(7)
        net = ClusteredNetwork.from_edges(3, [(0, 1), (1, 2)], [(0,), (1,), (2,)])
        comb = uniform_combiners(net)
        w = rng.standard_normal((3, 2))
        s = Sample(rng.standard_normal((3, 2)), rng.standard_normal(3))
        a = multitask_step(initial_state(3, 2, w), s, net, comb.replace(A=np.eye(3), C=np.eye(3)),
                           AdaptConfig(0.2, 0.0))
        np.testing.assert_array_equal(a.w, lms_step(initial_state(3, 2, w), s, AdaptConfig(0.2)).w)


class TestCentralized:
    def test_eta0_gives_truth(self, illustrative):
        env, net = illustrative.env, illustrative.network
        W = centralized_descent(env.R_x, env.p_xd, net, illustrative.combiners.P, AdaptConfig(0.1, 0.0))
        np.testing.assert_allclose(W[net.cluster_of], env.w_star, atol=1e-10)

    def test_single_cluster_gives_truth(self, illustrative):
        env = illustrative.env
        net = illustrative.network.with_clusters(single_cluster(10))
        # one cluster needs one truth; take the first cluster's vector everywhere
        w = np.tile(env.w_star[0], (10, 1))
        p = np.einsum("kij,kj->ki", env.R_x, w)
        W = centralized_descent(env.R_x, p, net, uniform_combiners(net).P, AdaptConfig(0.05, 5.0))
        np.testing.assert_allclose(W[0], env.w_star[0], atol=1e-10)

    def test_matches_linear_solve(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            net, comb, env = random_problem(rng)
            eta = rng.uniform(0, 2)
            W = centralized_descent(env.R_x, env.p_xd, net, comb.P, AdaptConfig(0.05, eta))
            ref = p2_equilibrium(env.R_x, env.p_xd, net, comb.P, eta)
            np.testing.assert_allclose(W, ref, atol=1e-8)
            g = p2_gradient(W, env.R_x, env.p_xd, net, comb.P, eta)
            assert np.linalg.norm(g) <= 1e-8

    def test_illustrative_matches_bias(self, illustrative):
        env, net, comb = illustrative.env, illustrative.network, illustrative.combiners
        W = centralized_descent(env.R_x, env.p_xd, net, comb.P, AdaptConfig(0.01, 0.1))
        bias = asymptotic_bias(assemble(net, comb, env, 0.01, 0.1)).reshape(10, 2)
        np.testing.assert_allclose(W[net.cluster_of] - env.w_star, bias, atol=1e-6)

    def test_non_convergence_reports_gradient(self, illustrative):
        env = illustrative.env
        with pytest.raises(ConvergenceError) as info:
            centralized_descent(env.R_x, env.p_xd, illustrative.network, illustrative.combiners.P,
                                AdaptConfig(0.001, 0.1), n_iters=5)
        assert info.value.grad_norm > 1e-10


class TestSimplex:
    def test_feasible_fixed(self):
        np.testing.assert_allclose(project_simplex([0.2, 0.3, 0.5]), [0.2, 0.3, 0.5], atol=1e-15)

    def test_symmetric(self):
        np.testing.assert_allclose(project_simplex([0.5, 0.5, 0.5]), [1 / 3] * 3)

    def test_single(self):
        assert project_simplex([-4.0]).tolist() == [1.0]

    def test_rows(self):
        out = project_simplex([[2.0, 0.0], [0.2, 0.8]])
        np.testing.assert_allclose(out, [[1.0, 0.0], [0.2, 0.8]])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            project_simplex([])


class TestUnmix:
    def test_fixed_point(self):
        M = np.array([[1.0, 0.2], [0.3, 1.0], [0.5, 0.5]])
        W = np.array([[0.3, 0.7]])
        out = unmix_step(W, W @ M.T, M, np.zeros((1, 1)), AdaptConfig(0.1, 0.0))
        np.testing.assert_allclose(out, W, atol=1e-15)

    def test_hand_case(self):
        out = unmix_step(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]]), np.eye(2), np.zeros((1, 1)),
                         AdaptConfig(0.1, 0.0))
        np.testing.assert_allclose(out, [[0.55, 0.45]])

    def test_identical_neighbors_neutral(self):
        M = np.eye(2)
        W = np.array([[0.5, 0.5], [0.5, 0.5]])
        Y = np.array([[0.9, 0.1], [0.9, 0.1]])
        rho = np.array([[0.0, 1.0], [1.0, 0.0]])
        a = unmix_step(W, Y, M, rho, AdaptConfig(0.1, 5.0))
        b = unmix_step(W, Y, M, rho, AdaptConfig(0.1, 0.0))
        np.testing.assert_array_equal(a, b)

    def test_sign_pull_direction(self):
        W = np.array([[0.8, 0.2], [0.2, 0.8]])
        rho = np.array([[0.0, 1.0], [1.0, 0.0]])
        M = np.eye(2)
        out = unmix_step(W, W @ M.T, M, rho, AdaptConfig(0.1, 1.0))
        # each pixel moves toward the other by mu * eta in each coordinate
        np.testing.assert_allclose(out, [[0.7, 0.3], [0.3, 0.7]])

    def test_output_on_simplex(self, rng):
        M = rng.uniform(0, 1, (6, 3))
        W = project_simplex(rng.uniform(0, 1, (10, 3)))
        Y = rng.uniform(0, 1, (10, 6))
        rho = rng.uniform(0, 1, (10, 10)) * (1 - np.eye(10))
        out = unmix_step(W, Y, M, rho, AdaptConfig(0.5, 0.3))
        assert out.min() >= 0
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


class TestRmse:
    def test_values(self):
        W = np.array([[0.2, 0.8], [0.5, 0.5]])
        assert rmse(W, W) == 0.0
        assert rmse([[0.3]], [[0.0]]) == pytest.approx(0.3)
        assert rmse(W + 0.05, W) == pytest.approx(0.05)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            rmse(np.zeros((2, 2)), np.zeros((2, 3)))
