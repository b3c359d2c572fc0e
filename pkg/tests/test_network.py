import math

import numpy as np
import pytest

from graphdiffusion import autodiff as ad
from graphdiffusion.encodings import EncodedFeatures, compute_encodings
from graphdiffusion.graphs import (num_pairs, pair_from_index, pair_index,
                                   permute_nodes)
from graphdiffusion.network import (Hyperparams, NetworkConfig, NetworkWeights,
                                    Prediction, TrainExample, forward,
                                    forward_link_pred, gradients, init_network,
                                    init_train_state, link_prediction_logits,
                                    load_checkpoint, loss, parameter_count,
                                    parameter_shapes, save_checkpoint,
                                    train_step)
from graphdiffusion.noise import build_schedule
from graphdiffusion.queries import build_message_graph, sample_query_pairs
from graphdiffusion.reference import dense_all_pairs_edge_loss
from graphdiffusion.training import prepare_example

from conftest import make_network_config, random_graph


@pytest.fixture
def setup(labeled_spec, tiny_enc_cfg):
    rng = np.random.default_rng(0)
    cfg = make_network_config(labeled_spec, tiny_enc_cfg)
    weights = init_network(cfg, np.random.default_rng(1))
    g = random_graph(6, labeled_spec, 0.4, rng)
    qp = sample_query_pairs(6, 0.5, rng)
    mg = build_message_graph(g, qp)
    enc = compute_encodings(g, mg.pair_indices, tiny_enc_cfg, labeled_spec)
    return cfg, weights, g, mg, enc


class TestInit:
    def test_deterministic(self, labeled_spec, tiny_enc_cfg):
        cfg = make_network_config(labeled_spec, tiny_enc_cfg)
        w1 = init_network(cfg, np.random.default_rng(7))
        w2 = init_network(cfg, np.random.default_rng(7))
        for name in w1.tensors:
            assert np.array_equal(w1.tensors[name], w2.tensors[name])

    def test_heads_must_divide(self, labeled_spec, tiny_enc_cfg):
        with pytest.raises(ValueError, match="divisible"):
            make_network_config(labeled_spec, tiny_enc_cfg, node_dim=30,
                                num_heads=4)

    def test_parameter_count_closed_form(self, labeled_spec, tiny_enc_cfg):
        cfg = make_network_config(labeled_spec, tiny_enc_cfg, num_layers=2,
                                  node_dim=32, edge_dim=16, graph_dim=16,
                                  num_heads=4)
        dx, de, dg, a, b = 32, 16, 16, 2, 3
        node_in = a + 3        # eigvec entries (2) + normalized degree
        edge_in = b + 5        # distance one-hot (hop_cap 3 + 1) + adamic-adar
        graph_in = 1 + 2 + 3 + 3 + a + b
        embed = (node_in * dx + dx) + (edge_in * de + de) + (graph_in * dg + dg)
        attn = 3 * dx * dx + 2 * de * dx
        film_node = 2 * dx * dg
        ff_node = dg * 2 * dx + 2 * dx + 2 * dx * dx + dx
        ln_node = 2 * dx
        edge_mix = 2 * dx * de + de * de
        film_edge = 2 * de * dg
        ff_edge = dg * 2 * de + 2 * de + 2 * de * de + de
        ln_edge = 2 * de
        pna = 4 * dx * dg + 4 * de * dg
        ff_graph = dg * 2 * dg + 2 * dg + 2 * dg * dg + dg
        per_layer = (attn + film_node + ff_node + ln_node + edge_mix +
                     film_edge + ff_edge + ln_edge + pna + ff_graph)
        heads = (dx * a + a) + (de * b + b)
        assert parameter_count(cfg) == embed + 2 * per_layer + heads

    def test_init_statistics(self, labeled_spec, tiny_enc_cfg):
        cfg = make_network_config(labeled_spec, tiny_enc_cfg)
        w = init_network(cfg, np.random.default_rng(2))
        for name, arr in w.tensors.items():
            shape = parameter_shapes(cfg)[name]
            if name.endswith(".scale"):
                assert np.all(arr == 1.0)
            elif len(shape) == 1:
                assert np.all(arr == 0.0)
            else:
                assert np.max(np.abs(arr)) <= 1.0 / math.sqrt(shape[0])


class TestForward:
    def test_rows_are_distributions(self, setup):
        cfg, weights, g, mg, enc = setup
        pred = forward(weights, mg, enc, 0.4)
        assert np.max(np.abs(pred.node_probs.sum(axis=1) - 1)) < 1e-6
        assert np.max(np.abs(pred.edge_probs.sum(axis=1) - 1)) < 1e-6
        assert np.array_equal(pred.query_pairs,
                              mg.pair_indices[mg.query_positions])

    def test_zero_output_heads_give_uniform(self, labeled_spec, tiny_enc_cfg):
        cfg = make_network_config(labeled_spec, tiny_enc_cfg)
        weights = init_network(cfg, np.random.default_rng(3))
        for name in ("head_node.w", "head_node.b", "head_edge.w",
                     "head_edge.b"):
            weights.tensors[name] = np.zeros_like(weights.tensors[name])
        # query-only message graph (empty noisy graph)
        rng = np.random.default_rng(4)
        g = random_graph(5, labeled_spec, 0.0, rng)
        mg = build_message_graph(g, np.array([0, 3, 7]))
        enc = compute_encodings(g, mg.pair_indices, tiny_enc_cfg, labeled_spec)
        pred = forward(weights, mg, enc, 0.9)
        assert np.max(np.abs(pred.node_probs - 0.5)) < 1e-12
        assert np.max(np.abs(pred.edge_probs - 1.0 / 3)) < 1e-12

    def test_permutation_equivariance(self, labeled_spec, tiny_enc_cfg):
        # network-level property: feed coherently permuted inputs and demand
        # permuted outputs (encoding equivariance is tested separately)
        rng = np.random.default_rng(5)
        cfg = make_network_config(labeled_spec, tiny_enc_cfg)
        weights = init_network(cfg, np.random.default_rng(6))
        for _ in range(5):
            n = 6
            g = random_graph(n, labeled_spec, 0.4, rng)
            qp = sample_query_pairs(n, 0.4, rng)
            mg = build_message_graph(g, qp)
            enc = compute_encodings(g, mg.pair_indices, tiny_enc_cfg,
                                    labeled_spec)
            pred = forward(weights, mg, enc, 0.3)

            perm = rng.permutation(n)
            h = permute_nodes(g, perm)
            i, j = pair_from_index(qp, n)
            qp2 = np.sort(pair_index(np.minimum(perm[i], perm[j]),
                                     np.maximum(perm[i], perm[j]), n))
            mg2 = build_message_graph(h, qp2)
            mi, mj = pair_from_index(mg.pair_indices, n)
            mapped = pair_index(np.minimum(perm[mi], perm[mj]),
                                np.maximum(perm[mi], perm[mj]), n)
            order = np.argsort(mapped)
            node_feat2 = np.empty_like(enc.node_features)
            node_feat2[perm] = enc.node_features
            enc2 = EncodedFeatures(node_feat2, enc.pair_features[order],
                                   enc.graph_features)
            assert np.array_equal(mg2.pair_indices, mapped[order])
            pred2 = forward(weights, mg2, enc2, 0.3)
            assert np.max(np.abs(pred2.node_probs[perm] - pred.node_probs)) \
                < 1e-6
            # query rows of pred2 follow the sorted mapped pair order
            qi, qj = pair_from_index(pred.query_pairs, n)
            qmapped = pair_index(np.minimum(perm[qi], perm[qj]),
                                 np.maximum(perm[qi], perm[qj]), n)
            qorder = np.argsort(qmapped)
            assert np.max(np.abs(pred2.edge_probs - pred.edge_probs[qorder])) \
                < 1e-6

    def test_mode_guard(self, setup):
        cfg, weights, g, mg, enc = setup
        with pytest.raises(ValueError):
            forward_link_pred(weights, g, np.array([0]), enc, 0.5)


class TestLinkPred:
    def _link_setup(self, labeled_spec, tiny_enc_cfg, seed=0):
        cfg = make_network_config(labeled_spec, tiny_enc_cfg, mode="link_pred")
        weights = init_network(cfg, np.random.default_rng(seed))
        rng = np.random.default_rng(seed + 1)
        g = random_graph(6, labeled_spec, 0.4, rng)
        qp = sample_query_pairs(6, 0.5, rng)
        enc = compute_encodings(g, g.pair_indices, tiny_enc_cfg, labeled_spec)
        return cfg, weights, g, qp, enc

    def test_outputs_are_distributions(self, labeled_spec, tiny_enc_cfg):
        _, weights, g, qp, enc = self._link_setup(labeled_spec, tiny_enc_cfg)
        pred = forward_link_pred(weights, g, qp, enc, 0.5)
        assert np.max(np.abs(pred.node_probs.sum(axis=1) - 1)) < 1e-6
        assert np.max(np.abs(pred.edge_probs.sum(axis=1) - 1)) < 1e-6

    def test_endpoint_symmetry_exact(self, labeled_spec, tiny_enc_cfg):
        _, weights, _, _, _ = self._link_setup(labeled_spec, tiny_enc_cfg)
        rng = np.random.default_rng(9)
        states = rng.normal(size=(4, weights.config.node_dim))
        fwd = link_prediction_logits(weights, states, np.array([[1, 3]]))
        rev = link_prediction_logits(weights, states, np.array([[3, 1]]))
        assert np.array_equal(fwd, rev)

    def test_hand_computed_two_node_mlp(self, labeled_spec, tiny_enc_cfg):
        _, weights, _, _, _ = self._link_setup(labeled_spec, tiny_enc_cfg)
        rng = np.random.default_rng(10)
        dx = weights.config.node_dim
        states = rng.normal(size=(2, dx))
        w1 = weights.tensors["link_mlp.w1"]
        b1 = weights.tensors["link_mlp.b1"]
        w2 = weights.tensors["link_mlp.w2"]
        b2 = weights.tensors["link_mlp.b2"]

        def mlp(a, b):
            h = np.maximum(np.concatenate([a, b]) @ w1 + b1, 0.0)
            return h @ w2 + b2

        expected = mlp(states[0], states[1]) + mlp(states[1], states[0])
        got = link_prediction_logits(weights, states, np.array([[0, 1]]))[0]
        assert np.max(np.abs(got - expected)) < 1e-12


class TestLoss:
    def test_perfect_prediction_zero(self, labeled_spec):
        rng = np.random.default_rng(11)
        g = random_graph(4, labeled_spec, 0.5, rng)
        node_probs = np.zeros((4, 2))
        node_probs[np.arange(4), g.node_labels] = 1.0
        qp = np.arange(num_pairs(4))
        targets = g.edge_label_at(qp)
        edge_probs = np.zeros((len(qp), 3))
        edge_probs[np.arange(len(qp)), targets] = 1.0
        detail = loss(Prediction(node_probs, qp, edge_probs), g)
        assert detail.total == 0.0
        assert detail.num_clamped == 0

    def test_uniform_hand_value(self):
        from graphdiffusion.graphs import GraphSpec, canonicalize
        spec = GraphSpec(2, 2, np.array([0.5, 0.5]), np.array([0.5, 0.5]))
        g = canonicalize([(0, 1)], [1], 2, spec, node_labels=[0, 1])
        pred = Prediction(np.full((2, 2), 0.5), np.array([0]),
                          np.full((1, 2), 0.5))
        detail = loss(pred, g, edge_weight=5.0)
        assert math.isclose(detail.node_term, 2 * math.log(2), rel_tol=1e-12)
        assert math.isclose(detail.edge_term, 5 * math.log(2), rel_tol=1e-12)
        assert math.isclose(detail.total, 7 * math.log(2), rel_tol=1e-12)

    def test_dense_limit_matches_oracle(self, labeled_spec, tiny_enc_cfg,
                                        setup):
        cfg, weights, g, _, _ = setup
        qp = np.arange(num_pairs(6))
        mg = build_message_graph(g, qp)
        enc = compute_encodings(g, mg.pair_indices, tiny_enc_cfg, labeled_spec)
        pred = forward(weights, mg, enc, 0.5)
        detail = loss(pred, g, edge_weight=5.0)
        dense_edge = dense_all_pairs_edge_loss(g, pred.edge_probs, 5.0)
        node_expected = -np.log(
            pred.node_probs[np.arange(6), g.node_labels]).sum()
        assert abs(detail.edge_term - dense_edge) < 1e-10
        assert abs(detail.node_term - node_expected) < 1e-12

    def test_clamp_counter(self, labeled_spec):
        rng = np.random.default_rng(12)
        g = random_graph(3, labeled_spec, 1.0, rng)
        node_probs = np.zeros((3, 2))
        node_probs[:, 1 - g.node_labels[0]] = 1.0    # zero mass on one truth
        node_probs[1, :] = 0.5
        node_probs[2, :] = 0.5
        pred = Prediction(node_probs, np.empty(0, dtype=np.int64),
                          np.zeros((0, 3)))
        detail = loss(pred, g)
        assert detail.num_clamped >= 1
        assert np.isfinite(detail.total)


class TestGradients:
    def test_matches_finite_differences(self, labeled_spec, tiny_enc_cfg):
        from graphdiffusion.verify import gradcheck_max_errors
        errors = gradcheck_max_errors(seed=0, entries_per_tensor=3)
        assert max(errors.values()) < 1e-4

    def test_unused_head_gets_zero_grad(self, setup, labeled_spec,
                                        tiny_enc_cfg):
        cfg, weights, g, _, _ = setup
        mg = build_message_graph(g, np.empty(0, dtype=np.int64))
        enc = compute_encodings(g, mg.pair_indices, tiny_enc_cfg, labeled_spec)
        ex = TrainExample(mg, enc, 0.5, g.node_labels,
                          np.empty(0, dtype=np.int64))
        grads, detail = gradients(weights, [ex])
        assert np.all(grads["head_edge.w"] == 0.0)
        assert np.all(grads["head_edge.b"] == 0.0)
        assert detail.edge_term == 0.0

    def test_permutation_consistent(self, labeled_spec, tiny_enc_cfg):
        rng = np.random.default_rng(13)
        cfg = make_network_config(labeled_spec, tiny_enc_cfg)
        weights = init_network(cfg, np.random.default_rng(14))
        n = 5
        g = random_graph(n, labeled_spec, 0.5, rng)
        qp = sample_query_pairs(n, 0.5, rng)
        mg = build_message_graph(g, qp)
        enc = compute_encodings(g, mg.pair_indices, tiny_enc_cfg, labeled_spec)
        ex = TrainExample(mg, enc, 0.5, g.node_labels, g.edge_label_at(
            mg.pair_indices[mg.query_positions]))
        grads_a, _ = gradients(weights, [ex])

        perm = rng.permutation(n)
        h = permute_nodes(g, perm)
        i, j = pair_from_index(qp, n)
        qp2 = np.sort(pair_index(np.minimum(perm[i], perm[j]),
                                 np.maximum(perm[i], perm[j]), n))
        mg2 = build_message_graph(h, qp2)
        mi, mj = pair_from_index(mg.pair_indices, n)
        mapped = pair_index(np.minimum(perm[mi], perm[mj]),
                            np.maximum(perm[mi], perm[mj]), n)
        order = np.argsort(mapped)
        node_feat2 = np.empty_like(enc.node_features)
        node_feat2[perm] = enc.node_features
        enc2 = EncodedFeatures(node_feat2, enc.pair_features[order],
                               enc.graph_features)
        ex2 = TrainExample(mg2, enc2, 0.5, h.node_labels, h.edge_label_at(
            mg2.pair_indices[mg2.query_positions]))
        grads_b, _ = gradients(weights, [ex2])
        worst = max(np.max(np.abs(grads_a[nm] - grads_b[nm]))
                    for nm in grads_a)
        assert worst < 1e-8


class TestTrainStep:
    def _example(self, labeled_spec, tiny_enc_cfg, seed):
        rng = np.random.default_rng(seed)
        schedule = build_schedule(6)
        g = random_graph(5, labeled_spec, 0.5, rng)
        return prepare_example(g, schedule, labeled_spec, tiny_enc_cfg, 0.5,
                               rng, augment=False)

    def test_zero_learning_rate_freezes(self, labeled_spec, tiny_enc_cfg):
        cfg = make_network_config(labeled_spec, tiny_enc_cfg)
        state = init_train_state(init_network(cfg, np.random.default_rng(15)))
        ex = self._example(labeled_spec, tiny_enc_cfg, 16)
        new_state, _ = train_step(state, [ex],
                                  Hyperparams(learning_rate=0.0,
                                              weight_decay=0.1))
        for name in state.weights.tensors:
            assert np.array_equal(state.weights.tensors[name],
                                  new_state.weights.tensors[name])

    def test_deterministic(self, labeled_spec, tiny_enc_cfg):
        results = []
        for _ in range(2):
            cfg = make_network_config(labeled_spec, tiny_enc_cfg)
            state = init_train_state(init_network(cfg,
                                                  np.random.default_rng(17)))
            for step_seed in range(3):
                ex = self._example(labeled_spec, tiny_enc_cfg, step_seed)
                state, _ = train_step(state, [ex], Hyperparams(1e-3))
            results.append(state)
        for name in results[0].weights.tensors:
            assert np.array_equal(results[0].weights.tensors[name],
                                  results[1].weights.tensors[name])

    def test_loss_decreases_on_fixed_batch(self, labeled_spec, tiny_enc_cfg):
        cfg = make_network_config(labeled_spec, tiny_enc_cfg, num_layers=1,
                                  node_dim=8, edge_dim=8, graph_dim=4,
                                  num_heads=2)
        state = init_train_state(init_network(cfg, np.random.default_rng(18)))
        batch = [self._example(labeled_spec, tiny_enc_cfg, s)
                 for s in (20, 21, 22, 23)]
        losses = []
        hyper = Hyperparams(learning_rate=3e-3, weight_decay=0.0)
        for _ in range(200):
            state, detail = train_step(state, batch, hyper)
            losses.append(detail.total)
        assert losses[-1] < 0.8 * losses[0]
        assert min(losses) == min(losses[-50:])   # still improving at the end


class TestCheckpoint:
    def test_byte_exact_round_trip(self, labeled_spec, tiny_enc_cfg, tmp_path):
        cfg = make_network_config(labeled_spec, tiny_enc_cfg)
        weights = init_network(cfg, np.random.default_rng(19))
        extras = {"diffusion_steps": 6, "note": "round-trip"}
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        save_checkpoint(p1, weights, extras)
        loaded, extras2 = load_checkpoint(p1)
        assert extras2 == extras
        assert loaded.config == cfg
        for name in weights.tensors:
            assert np.array_equal(weights.tensors[name], loaded.tensors[name])
        save_checkpoint(p2, loaded, extras2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk.ckpt"
        p.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(p)

    def test_version_check(self, labeled_spec, tiny_enc_cfg, tmp_path):
        cfg = make_network_config(labeled_spec, tiny_enc_cfg)
        weights = init_network(cfg, np.random.default_rng(20))
        p = tmp_path / "v.ckpt"
        save_checkpoint(p, weights)
        raw = bytearray(p.read_bytes())
        raw[len(b"GRAPHDIFFUSION-CKPT\n")] = 99
        p.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(p)
