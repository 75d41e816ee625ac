import numpy as np
import pytest
from scipy.linalg import solve_discrete_lyapunov

from clusterdiff.synth import NodeEnvironment
from clusterdiff.theory import (SizeCapExceeded, StabilityError, assemble, asymptotic_bias, kron,
                                mean_recursion, solve_weighting, spectral_radius, steady_state_msd,
                                step_size_bound, to_db, transient_msd, unvec, vec)
from clusterdiff.topology import ClusteredNetwork, CombinerSet, single_cluster, uniform_combiners

from oracles import forward_msd, random_problem


def scalar_model(mu=0.1, s2=0.01, R=1.0):
    net = ClusteredNetwork.from_edges(1, [], [(0,)])
    comb = CombinerSet([[1.0]], [[1.0]], [[0.0]], {0})
    env = NodeEnvironment([[1.0]], [[[R]]], [s2], network=net)
    return assemble(net, comb, env, mu, 0.0)


class TestLinearAlgebra:
    def test_vec_column_major(self):
        assert vec([[1, 2], [3, 4]]).tolist() == [1, 3, 2, 4]
        np.testing.assert_array_equal(unvec(vec(np.arange(9.0).reshape(3, 3)), 3), np.arange(9.0).reshape(3, 3))

    def test_kron(self):
        np.testing.assert_array_equal(kron([[1, 2]], [[1], [1]]), [[1, 2], [1, 2]])

    def test_spectral_radius(self):
        assert spectral_radius([[0.0, 1.0], [-1.0, 0.0]]) == pytest.approx(1.0)
        assert spectral_radius(np.diag([0.5, -0.9])) == pytest.approx(0.9)

    def test_to_db(self):
        assert to_db(0.01) == pytest.approx(-20.0)

    def test_k_apply_matches_kron(self, illustrative):
        m = assemble(illustrative.network, illustrative.combiners, illustrative.env, 0.05, 1.0)
        S = np.random.default_rng(0).standard_normal((20, 20))
        np.testing.assert_allclose(vec(m.K_apply(S)), m.K_dense() @ vec(S), atol=1e-12)


class TestScalar:
    def test_matrices(self):
        m = scalar_model()
        assert m.B[0, 0] == pytest.approx(0.9)
        assert m.G[0, 0] == pytest.approx(0.01)
        assert m.K_dense()[0, 0] == pytest.approx(0.81)
        assert m.r.tolist() == [0.0]

    def test_transient_closed_form(self):
        m = scalar_model()
        n = np.arange(51)
        expect = 0.81 ** n + 0.01 * 0.01 * (1 - 0.81 ** n) / 0.19
        np.testing.assert_allclose(transient_msd(m, [-1.0], 50).zeta, expect, rtol=1e-12)

    def test_steady_state_closed_form(self):
        # mu sigma^2 / (2 - mu R) for a single LMS filter
        assert steady_state_msd(scalar_model(0.1, 0.01)) == pytest.approx(0.1 * 0.01 / 1.9, rel=1e-10)
        assert steady_state_msd(scalar_model(0.5, 0.2, 2.0)) == pytest.approx(0.5 * 0.2 / 1.0, rel=1e-10)


class TestOracles:
    def test_transient_matches_forward_propagation(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            net, comb, env = random_problem(rng)
            mu, eta = rng.uniform(0.01, 0.2), rng.uniform(0, 2)
            m = assemble(net, comb, env, mu, eta)
            v0 = rng.standard_normal(m.size)
            ref = forward_msd(m, v0, 40)
            np.testing.assert_allclose(transient_msd(m, v0, 40).zeta, ref, rtol=1e-9, atol=1e-14)

    def test_illustrative_transient(self, illustrative):
        m = assemble(illustrative.network, illustrative.combiners, illustrative.env, 0.05, 1.0)
        v0 = -illustrative.env.w_star.reshape(-1)
        np.testing.assert_allclose(transient_msd(m, v0, 300).zeta, forward_msd(m, v0, 300), rtol=1e-9)

    def test_steady_state_matches_long_forward(self, illustrative):
        m = assemble(illustrative.network, illustrative.combiners, illustrative.env, 0.05, 1.0)
        v0 = -illustrative.env.w_star.reshape(-1)
        assert steady_state_msd(m) == pytest.approx(forward_msd(m, v0, 6000)[-1], rel=1e-8)

    def test_weighting_matches_lyapunov(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            net, comb, env = random_problem(rng)
            m = assemble(net, comb, env, 0.05, 0.5)
            if spectral_radius(m.B) >= 0.999:
                continue
            rhs = np.eye(m.size)
            np.testing.assert_allclose(solve_weighting(m.B, rhs), solve_discrete_lyapunov(m.B.T, rhs),
                                       rtol=1e-9, atol=1e-10)

    def test_mean_recursion(self, illustrative):
        m = assemble(illustrative.network, illustrative.combiners, illustrative.env, 0.05, 1.0)
        v0 = -illustrative.env.w_star.reshape(-1)
        traj = mean_recursion(m, v0, 4000)
        np.testing.assert_allclose(traj[-1], asymptotic_bias(m), atol=1e-10)
        np.testing.assert_allclose(traj[1], m.B @ v0 - 0.05 * m.r, atol=1e-15)


class TestStructure:
    def test_q_annihilates_consensus(self, illustrative):
        m = assemble(illustrative.network, illustrative.combiners, illustrative.env, 0.05, 1.0)
        w = np.tile([0.3, -1.2], 10)
        np.testing.assert_allclose(m.Q_mat @ w, 0.0, atol=1e-14)

    def test_zero_rows_exert_no_pull(self):
        net = ClusteredNetwork.from_edges(2, [(0, 1)], [(0,), (1,)])
        comb = CombinerSet(np.eye(2), np.eye(2), [[0.0, 1.0], [0.0, 0.0]], {1})
        env = NodeEnvironment([[1.0], [3.0]], [[[1.0]], [[1.0]]], [0.01, 0.01], network=net)
        m = assemble(net, comb, env, 0.1, 1.0)
        assert m.r.tolist() == [-2.0, 0.0]

    def test_r_zero_single_cluster(self, illustrative):
        net = illustrative.network.with_clusters(single_cluster(10))
        env = NodeEnvironment(np.tile([0.5, -0.5], (10, 1)), illustrative.env.R_x, illustrative.env.sigma2_z,
                              network=net)
        m = assemble(net, uniform_combiners(net), env, 0.05, 1.0)
        assert not m.r.any()
        np.testing.assert_allclose(asymptotic_bias(m), 0.0, atol=1e-15)

    def test_step_size_bound(self):
        net = ClusteredNetwork.from_edges(2, [(0, 1)], [(0,), (1,)])
        comb = uniform_combiners(net)
        env = NodeEnvironment(np.zeros((2, 2)), np.array([np.diag([1.2, 0.5]), np.eye(2)]), [0.1, 0.1],
                              network=net)
        assert step_size_bound(assemble(net, comb, env, 0.1, 0.0)) == pytest.approx(5 / 3)
        env = NodeEnvironment(np.zeros((2, 2)), np.array([np.eye(2), np.eye(2)]), [0.1, 0.1], network=net)
        assert step_size_bound(assemble(net, comb, env, 0.1, 1.0)) == pytest.approx(2 / 3)

    def test_stable_inside_bound(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            net, comb, env = random_problem(rng)
            eta = rng.uniform(0, 3)
            bound = step_size_bound(assemble(net, comb, env, 0.01, eta))
            m = assemble(net, comb, env, rng.uniform(0.01, 0.99) * bound, eta)
            assert spectral_radius(m.B) < 1


class TestErrors:
    def test_size_cap(self, illustrative):
        with pytest.raises(SizeCapExceeded, match="size cap"):
            assemble(illustrative.network, illustrative.combiners, illustrative.env, 0.05, 1.0, size_cap=399)
        assemble(illustrative.network, illustrative.combiners, illustrative.env, 0.05, 1.0, size_cap=400)

    def test_unstable_steady_state(self):
        with pytest.raises(StabilityError):
            steady_state_msd(scalar_model(mu=2.5))

    def test_unstable_mean_warns(self):
        with pytest.warns(RuntimeWarning):
            mean_recursion(scalar_model(mu=2.5), [1.0], 3)

    def test_size_mismatch(self, illustrative):
        net = ClusteredNetwork.from_edges(1, [], [(0,)])
        with pytest.raises(ValueError):
            assemble(net, CombinerSet([[1.0]], [[1.0]], [[0.0]], {0}), illustrative.env, 0.1, 0.0)
