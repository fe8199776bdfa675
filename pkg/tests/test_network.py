import dataclasses

import numpy as np
import pytest

from csgnn.dynamics import LayerParams, Parameterization, feature_step
from csgnn.equivariant import AdjacencyStepConfig, EquivariantCoeffs, max_step_adjacency
from csgnn.graph import Graph, PerturbationBudget, l1_vec_distance
from csgnn.network import (CoupledLayer, NetworkParams, certificate, estimate_mixed_lipschitz,
                           evolve, expansivity_bound, forward, lipschitz_upper,
                           load_checkpoint, save_checkpoint, weighted_distance)


def zero_dynamics_layer(c, h=0.5):
    return CoupledLayer(
        feature=LayerParams(h=h, K=np.zeros((c, c))),
        adjacency=AdjacencyStepConfig(coeffs=EquivariantCoeffs(k=np.zeros(8), alpha=0.0), h=h),
    )


def random_params(rng, c_in, c, c_out, depth=2, dropout_p=0.0):
    layers = []
    for _ in range(depth):
        coeffs = EquivariantCoeffs(k=0.3 * rng.standard_normal(8),
                                   alpha=-1.0 - rng.random())
        layers.append(CoupledLayer(
            feature=LayerParams(h=0.1, K=0.5 * rng.standard_normal((c, c))),
            adjacency=AdjacencyStepConfig(coeffs=coeffs,
                                          h=0.5 * max_step_adjacency(coeffs)),
        ))
    return NetworkParams(
        encoder=rng.standard_normal((c_in, c)),
        layers=tuple(layers),
        classifier_w=rng.standard_normal((c, c_out)),
        classifier_b=rng.standard_normal(c_out),
        dropout_p=dropout_p,
    )


def random_graph(rng, n, c_in):
    upper = np.triu(rng.random((n, n)) < 0.5, k=1)
    return Graph(adjacency=(upper | upper.T).astype(float),
                 features=rng.standard_normal((n, c_in)),
                 labels=rng.integers(0, 2, n),
                 train_mask=np.arange(n) < n // 2)


class TestForward:
    def test_identity_network_returns_features(self):
        rng = np.random.default_rng(0)
        g = random_graph(rng, 5, 3)
        params = NetworkParams(
            encoder=np.eye(3),
            layers=(zero_dynamics_layer(3),),
            classifier_w=np.eye(3),
            classifier_b=np.zeros(3),
        )
        logits, trace = forward(g, params, mode="eval")
        assert np.array_equal(logits, g.features)
        assert len(trace.feature_states) == 2
        assert np.array_equal(trace.adjacency_states[1], g.adjacency)

    def test_eval_mode_is_bit_deterministic(self):
        rng = np.random.default_rng(1)
        g = random_graph(rng, 6, 3)
        params = random_params(rng, 3, 4, 2)
        a, _ = forward(g, params, mode="eval")
        b, _ = forward(g, params, mode="eval")
        assert np.array_equal(a, b)

    def test_train_mode_dropout_reproducible_from_seed(self):
        rng = np.random.default_rng(2)
        g = random_graph(rng, 6, 3)
        params = random_params(rng, 3, 4, 2, dropout_p=0.5)
        a, _ = forward(g, params, mode="train", rng=np.random.default_rng(7))
        b, _ = forward(g, params, mode="train", rng=np.random.default_rng(7))
        c, _ = forward(g, params, mode="train", rng=np.random.default_rng(8))
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_recorded_masks_replay(self):
        rng = np.random.default_rng(3)
        g = random_graph(rng, 5, 3)
        params = random_params(rng, 3, 4, 2, dropout_p=0.4)
        logits, trace = forward(g, params, mode="train", rng=np.random.default_rng(0))
        masks = [trace.input_mask, *trace.layer_masks, trace.final_mask]
        replayed, _ = forward(g, params, mode="train", dropout_masks=masks)
        assert np.array_equal(logits, replayed)

    def test_eval_matches_evolve(self):
        rng = np.random.default_rng(4)
        g = random_graph(rng, 6, 3)
        params = random_params(rng, 3, 4, 2)
        _, trace = forward(g, params, mode="eval")
        fs, as_ = evolve(g.features @ params.encoder, g.adjacency, params.layers)
        assert np.array_equal(trace.feature_states[-1], fs[-1])
        assert np.array_equal(trace.adjacency_states[-1], as_[-1])

    def test_nan_aborts_with_diagnostic(self):
        rng = np.random.default_rng(5)
        g = random_graph(rng, 4, 3)
        params = random_params(rng, 3, 4, 2)
        bad = dataclasses.replace(params, encoder=np.full((3, 4), np.nan))
        with pytest.raises(FloatingPointError, match="encoded features"):
            forward(g, bad, mode="eval")

    def test_network_permutation_equivariance_learn_k(self):
        rng = np.random.default_rng(6)
        g = random_graph(rng, 7, 3)
        params = random_params(rng, 3, 4, 3)
        perm = rng.permutation(7)
        pm = np.zeros((7, 7))
        pm[np.arange(7), perm] = 1.0
        gp = Graph(adjacency=pm @ g.adjacency @ pm.T, features=pm @ g.features,
                   labels=g.labels[perm], train_mask=g.train_mask[perm])
        lhs, _ = forward(gp, params, mode="eval")
        rhs = pm @ forward(g, params, mode="eval")[0]
        assert np.abs(lhs - rhs).max() <= 1e-9 * max(1.0, np.abs(rhs).max())

    def test_feature_width_mismatch(self):
        rng = np.random.default_rng(7)
        g = random_graph(rng, 4, 3)
        params = random_params(rng, 5, 4, 2)
        with pytest.raises(ValueError, match="encoder"):
            forward(g, params, mode="eval")


class TestDistances:
    def test_weighted_distance_identical_states(self):
        f = np.ones((3, 2))
        a = np.eye(3)
        assert weighted_distance(1.0, 1.0, (f, a), (f, a)) == 0.0

    def test_weighted_distance_additivity(self):
        f1 = np.zeros((1, 2))
        f2 = np.array([[3.0, 4.0]])
        a1 = np.zeros((2, 2))
        a2 = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert weighted_distance(1.0, 1.0, (f1, a1), (f2, a2)) == 7.0

    def test_weighted_distance_homogeneous(self):
        rng = np.random.default_rng(8)
        s1 = (rng.standard_normal((3, 2)), rng.standard_normal((3, 3)))
        s2 = (rng.standard_normal((3, 2)), rng.standard_normal((3, 3)))
        base = weighted_distance(1.0, 1.0, s1, s2)
        assert weighted_distance(2.5, 2.5, s1, s2) == pytest.approx(2.5 * base, rel=1e-12)

    def test_weighted_distance_rejects_nonpositive_weights(self):
        with pytest.raises(ValueError):
            weighted_distance(0.0, 1.0, (np.zeros((1, 1)), np.zeros((1, 1))),
                              (np.zeros((1, 1)), np.zeros((1, 1))))


class TestExpansivityBound:
    def test_feature_only_budget(self):
        b = PerturbationBudget(eps_feat=0.7, eps_adj=0.0)
        assert expansivity_bound([0.5, 0.5], [3.0, 4.0], b) == pytest.approx(0.7)

    def test_single_layer_hand_case(self):
        b = PerturbationBudget(eps_feat=0.0, eps_adj=1.0)
        assert expansivity_bound([0.5], [2.0], b) == pytest.approx(2.0)

    def test_zero_lipschitz(self):
        b = PerturbationBudget(eps_feat=0.3, eps_adj=0.4)
        assert expansivity_bound([0.1, 0.2], [0.0, 0.0], b) == pytest.approx(0.7)

    def test_negative_inputs_rejected(self):
        b = PerturbationBudget(eps_feat=0.0, eps_adj=1.0)
        with pytest.raises(ValueError):
            expansivity_bound([-0.1], [1.0], b)


class TestMixedLipschitz:
    def test_zero_features_give_zero_bounds(self):
        layer = LayerParams(h=0.1, K=np.eye(2))
        lower, upper = estimate_mixed_lipschitz(np.zeros((4, 2)), layer, 5,
                                                np.random.default_rng(0))
        assert lower == 0.0
        assert upper == 0.0

    def test_zero_weights_give_zero_upper(self):
        rng = np.random.default_rng(1)
        layer = LayerParams(h=0.1, parameterization=Parameterization.LEARN_W,
                            W=np.zeros((4, 4)), K=np.eye(2))
        lower, upper = estimate_mixed_lipschitz(rng.standard_normal((4, 2)), layer, 5, rng)
        assert upper == 0.0
        assert lower <= 1e-12

    def test_lower_below_upper(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n, c = int(rng.integers(2, 6)), int(rng.integers(1, 4))
            layer = LayerParams(h=0.1, K=rng.standard_normal((c, c)))
            lower, upper = estimate_mixed_lipschitz(rng.standard_normal((n, c)), layer, 8, rng)
            assert lower <= upper + 1e-12

    def test_upper_bounds_realized_differences(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            n, c = 4, 2
            layer = LayerParams(h=0.1, K=rng.standard_normal((c, c)))
            f = rng.standard_normal((n, c))
            a = rng.random((n, n))
            d = rng.standard_normal((n, n))
            from csgnn.dynamics import feature_field
            diff = np.linalg.norm(feature_field(f, a + d, layer) - feature_field(f, a, layer))
            bound = lipschitz_upper(f, layer, max(np.abs(a).max(), np.abs(a + d).max()))
            assert diff <= bound * l1_vec_distance(a + d, a) + 1e-9


class TestCertificate:
    def test_zero_budget_zero_bound(self):
        rng = np.random.default_rng(4)
        params = random_params(rng, 3, 4, 2)
        cert = certificate(rng.standard_normal((5, 4)), np.eye(5), params,
                           PerturbationBudget(eps_feat=0.0, eps_adj=0.0))
        assert cert["bound"] == 0.0

    def test_zero_coefficient_network(self):
        params = NetworkParams(encoder=np.eye(2), layers=(zero_dynamics_layer(2),),
                               classifier_w=np.eye(2), classifier_b=np.zeros(2))
        cert = certificate(np.ones((3, 2)), np.eye(3), params,
                           PerturbationBudget(eps_feat=0.25, eps_adj=0.5))
        assert cert["bound"] == pytest.approx(0.75)

    def test_matches_expansivity_bound(self):
        rng = np.random.default_rng(5)
        params = random_params(rng, 3, 4, 2, depth=3)
        budget = PerturbationBudget(eps_feat=0.3, eps_adj=0.7)
        f0 = rng.standard_normal((6, 4))
        a0 = np.abs(rng.standard_normal((6, 6)))
        cert = certificate(f0, a0, params, budget)
        recomputed = expansivity_bound([r["h_feature"] for r in cert["layers"]],
                                       [r["lipschitz_upper"] for r in cert["layers"]],
                                       budget)
        assert cert["bound"] == pytest.approx(recomputed, rel=1e-12)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(6)
        params = random_params(rng, 3, 4, 2, depth=2, dropout_p=0.25)
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        assert np.array_equal(loaded.encoder, params.encoder)
        assert np.array_equal(loaded.classifier_w, params.classifier_w)
        assert np.array_equal(loaded.classifier_b, params.classifier_b)
        assert loaded.dropout_p == params.dropout_p
        for a, b in zip(loaded.layers, params.layers):
            assert np.array_equal(a.feature.K, b.feature.K)
            assert np.array_equal(a.adjacency.coeffs.k, b.adjacency.coeffs.k)
            assert a.feature.h == b.feature.h
            assert a.adjacency.h == b.adjacency.h
        path2 = tmp_path / "again.ckpt"
        save_checkpoint(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_learn_w_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        coeffs = EquivariantCoeffs(k=0.1 * rng.standard_normal(8), alpha=-0.5)
        layer = CoupledLayer(
            feature=LayerParams(h=0.05, parameterization=Parameterization.LEARN_W,
                                W=np.eye(4) + 0.01 * rng.standard_normal((4, 4))),
            adjacency=AdjacencyStepConfig(coeffs=coeffs, h=0.3 * max_step_adjacency(coeffs)),
        )
        params = NetworkParams(encoder=rng.standard_normal((3, 2)), layers=(layer,),
                               classifier_w=rng.standard_normal((2, 2)),
                               classifier_b=np.zeros(2), share_weights=False)
        save_checkpoint(params, tmp_path / "w.ckpt")
        loaded = load_checkpoint(tmp_path / "w.ckpt")
        assert np.array_equal(loaded.layers[0].feature.W, layer.feature.W)
        assert loaded.layers[0].feature.K is None

    def test_corrupt_checkpoint_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"not a checkpoint at all")
        with pytest.raises(ValueError):
            load_checkpoint(path)
