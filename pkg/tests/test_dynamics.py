import numpy as np
import pytest

from csgnn.dynamics import (EdgeTensor, LayerParams, Parameterization,
                            check_feature_contraction, energy, feature_step,
                            graph_gradient, graph_gradient_adjoint,
                            gradient_operator_sq_norm, max_feature_step)

PATH_GRAPH = np.array([[0.0, 1.0], [1.0, 0.0]])
TWO_NODE_F = np.array([[1.0], [3.0]])


def linear_params(h, **kw):
    # slope-1 LeakyReLU is the identity: hand-computable oracles
    return LayerParams(h=h, leaky_slope=1.0, **kw)


class TestGraphGradient:
    def test_single_edge_hand_case(self):
        out = graph_gradient(PATH_GRAPH, TWO_NODE_F).values
        expected = np.zeros((2, 2, 1))
        expected[0, 1, 0] = -2.0
        expected[1, 0, 0] = 2.0
        assert np.array_equal(out, expected)

    def test_constant_features_vanish(self):
        rng = np.random.default_rng(0)
        a = rng.random((5, 5))
        f = np.tile(rng.standard_normal((1, 3)), (5, 1))
        assert np.abs(graph_gradient(a, f).values).max() == 0.0

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((4, 4))
        f = rng.standard_normal((4, 3))
        out = graph_gradient(a, f).values
        for i in range(4):
            for j in range(4):
                for k in range(3):
                    assert out[i, j, k] == a[i, j] * (f[i, k] - f[j, k])

    def test_zero_on_non_edges(self):
        rng = np.random.default_rng(2)
        a = (rng.random((6, 6)) < 0.3).astype(float)
        out = graph_gradient(a, rng.standard_normal((6, 2))).values
        assert np.all(out[a == 0.0] == 0.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            graph_gradient(np.zeros((3, 3)), np.zeros((2, 1)))


class TestAdjoint:
    def test_hand_case_equals_twice_laplacian(self):
        o = graph_gradient(PATH_GRAPH, TWO_NODE_F)
        assert np.array_equal(graph_gradient_adjoint(PATH_GRAPH, o), [[-4.0], [4.0]])

    def test_zero_tensor(self):
        out = graph_gradient_adjoint(PATH_GRAPH, EdgeTensor(np.zeros((2, 2, 1))))
        assert np.array_equal(out, np.zeros((2, 1)))

    def test_adjointness_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            n, c = int(rng.integers(2, 9)), int(rng.integers(1, 6))
            a = rng.standard_normal((n, n))
            f = rng.standard_normal((n, c))
            o = rng.standard_normal((n, n, c))
            lhs = float((graph_gradient(a, f).values * o).sum())
            rhs = float((f * graph_gradient_adjoint(a, EdgeTensor(o))).sum())
            assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(rhs))


class TestFeatureStep:
    def test_consensus_hand_case(self):
        out = feature_step(TWO_NODE_F, PATH_GRAPH, linear_params(h=0.25))
        assert np.allclose(out, [[2.0], [2.0]])

    def test_zero_step_is_identity(self):
        rng = np.random.default_rng(4)
        f = rng.standard_normal((5, 3))
        a = rng.standard_normal((5, 5))
        assert np.array_equal(feature_step(f, a, linear_params(h=0.0)), f)

    def test_equal_inputs_equal_outputs(self):
        rng = np.random.default_rng(5)
        f = rng.standard_normal((4, 2))
        a = rng.standard_normal((4, 4))
        p = LayerParams(h=0.1, K=rng.standard_normal((2, 2)))
        assert np.array_equal(feature_step(f, a, p), feature_step(f.copy(), a, p))

    def test_constant_rows_are_fixed_points(self):
        rng = np.random.default_rng(6)
        a = (rng.random((6, 6)) < 0.5).astype(float)
        f = np.tile(rng.standard_normal((1, 3)), (6, 1))
        p = LayerParams(h=0.9, K=rng.standard_normal((3, 3)))
        assert np.abs(feature_step(f, a, p) - f).max() <= 1e-12

    def test_permutation_equivariance_identity_w(self):
        rng = np.random.default_rng(7)
        for _ in range(500):
            n, c = int(rng.integers(2, 8)), int(rng.integers(1, 4))
            p = LayerParams(h=0.3, K=rng.standard_normal((c, c)))
            a = rng.standard_normal((n, n))
            f = rng.standard_normal((n, c))
            perm = rng.permutation(n)
            pm = np.zeros((n, n))
            pm[np.arange(n), perm] = 1.0
            lhs = feature_step(pm @ f, pm @ a @ pm.T, p)
            rhs = pm @ feature_step(f, a, p)
            assert np.abs(lhs - rhs).max() <= 1e-10 * max(1.0, np.abs(rhs).max())

    def test_learn_k_rejects_w(self):
        with pytest.raises(ValueError):
            LayerParams(h=0.1, parameterization=Parameterization.LEARN_K, W=np.eye(2))

    def test_learn_w_requires_scaled_identity_k(self):
        with pytest.raises(ValueError):
            LayerParams(h=0.1, parameterization=Parameterization.LEARN_W,
                        W=np.eye(2), K=np.array([[1.0, 0.2], [0.2, 1.0]]))


class TestEnergy:
    def test_constant_rows_zero(self):
        a = np.random.default_rng(8).random((4, 4))
        f = np.ones((4, 2))
        assert energy(a, f, leaky_slope=1.0) == 0.0

    def test_hand_case(self):
        assert energy(PATH_GRAPH, TWO_NODE_F, leaky_slope=1.0) == pytest.approx(4.0)

    def test_consensus_step_dissipates(self):
        stepped = feature_step(TWO_NODE_F, PATH_GRAPH, linear_params(h=0.25))
        e0 = energy(PATH_GRAPH, TWO_NODE_F, leaky_slope=1.0)
        e1 = energy(PATH_GRAPH, stepped, leaky_slope=1.0)
        assert e1 == pytest.approx(0.0, abs=1e-12)
        assert e1 <= e0

    def test_monotone_under_safe_step(self):
        rng = np.random.default_rng(9)
        for _ in range(1000):
            n, c = int(rng.integers(2, 8)), int(rng.integers(1, 5))
            b = rng.standard_normal((c, c))
            k = b @ b.T + 0.05 * np.eye(c)
            a = rng.standard_normal((n, n))
            p = LayerParams(h=max_feature_step(a, LayerParams(h=1.0, K=k)), K=k)
            f = rng.standard_normal((n, c))
            e0 = energy(a, f, leaky_slope=p.leaky_slope)
            e1 = energy(a, feature_step(f, a, p), leaky_slope=p.leaky_slope)
            assert e1 <= e0 + 1e-9


class TestContraction:
    def test_zero_perturbation_trivially_true(self):
        rng = np.random.default_rng(10)
        p = LayerParams(h=0.1, parameterization=Parameterization.LEARN_W,
                        W=rng.standard_normal((3, 3)), K=np.eye(2))
        assert check_feature_contraction(rng.standard_normal((3, 2)),
                                         np.zeros((3, 2)),
                                         rng.standard_normal((3, 3)), p)

    def test_holds_under_safe_step(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            n, c = int(rng.integers(2, 8)), int(rng.integers(1, 5))
            lam = 0.2 + 2.0 * rng.random()
            w = rng.standard_normal((n, n))
            a = rng.standard_normal((n, n))
            base = LayerParams(h=1.0, parameterization=Parameterization.LEARN_W,
                               W=w, K=lam * np.eye(c))
            p = LayerParams(h=max_feature_step(a, base),
                            parameterization=Parameterization.LEARN_W,
                            W=w, K=lam * np.eye(c))
            assert check_feature_contraction(rng.standard_normal((n, c)),
                                             rng.standard_normal((n, c)), a, p)

    def test_enormous_step_expands_somewhere(self):
        rng = np.random.default_rng(12)
        found = False
        for _ in range(200):
            n, c = 5, 3
            w = rng.standard_normal((n, n))
            a = rng.standard_normal((n, n))
            base = LayerParams(h=1.0, parameterization=Parameterization.LEARN_W,
                               W=w, K=np.eye(c))
            p = LayerParams(h=1e3 * max_feature_step(a, base),
                            parameterization=Parameterization.LEARN_W, W=w, K=np.eye(c))
            if not check_feature_contraction(rng.standard_normal((n, c)),
                                             rng.standard_normal((n, c)), a, p):
                found = True
                break
        assert found

    def test_operator_norm_matches_dense_oracle(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            n = int(rng.integers(2, 7))
            a = rng.standard_normal((n, n))
            w = rng.standard_normal((n, n))
            dense = np.zeros((n * n, n))
            for col in range(n):
                e = np.zeros(n)
                e[col] = 1.0
                dense[:, col] = (a * (e[:, None] - e[None, :])).reshape(-1)
            sv = np.linalg.norm(dense @ w, 2) ** 2
            assert gradient_operator_sq_norm(a, w) == pytest.approx(sv, rel=1e-10, abs=1e-10)
