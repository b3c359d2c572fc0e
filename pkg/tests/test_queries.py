import numpy as np
import pytest
from scipy import stats as sstats

from graphdiffusion.graphs import batch, num_pairs
from graphdiffusion.network import Prediction, loss
from graphdiffusion.queries import (build_message_graph, query_count,
                                    sample_query_edges, sample_query_pairs)
from graphdiffusion.reference import dense_all_pairs_edge_loss

from conftest import random_graph


class TestQuerySampling:
    def test_dense_limit_selects_all(self):
        rng = np.random.default_rng(0)
        out = sample_query_pairs(5, 1.0, rng)
        assert out.tolist() == list(range(10))

    def test_ceil_count(self):
        # n=5 has 10 pairs; a 0.16 fraction rounds up to 2 query pairs
        assert query_count(5, 0.16) == 2
        rng = np.random.default_rng(1)
        assert len(sample_query_pairs(5, 0.16, rng)) == 2

    def test_uniform_selection(self):
        rng = np.random.default_rng(2)
        total = num_pairs(6)
        counts = np.zeros(total)
        draws = 100_000
        k = query_count(6, 0.25)
        for _ in range(draws):
            counts[sample_query_pairs(6, 0.25, rng)] += 1
        expected = np.full(total, draws * k / total)
        assert sstats.chisquare(counts, expected).pvalue > 1e-3

    def test_invalid_sparsity(self):
        rng = np.random.default_rng(3)
        for bad in (0.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                sample_query_pairs(5, bad, rng)

    def test_per_graph_batch_sampling(self, labeled_spec):
        rng = np.random.default_rng(4)
        graphs = [random_graph(n, labeled_spec, 0.4, rng) for n in (4, 6, 9)]
        qs = sample_query_edges(batch(graphs), 0.3, rng)
        assert len(qs) == 3
        for g, picks in zip(graphs, qs.pair_indices):
            assert len(picks) == query_count(g.num_nodes, 0.3)
            assert np.all(np.diff(picks) > 0)
            assert picks.max() < num_pairs(g.num_nodes)


class TestMessageGraph:
    def test_queries_subset_of_noisy(self, labeled_spec):
        rng = np.random.default_rng(5)
        g = random_graph(6, labeled_spec, 0.6, rng)
        queries = g.pair_indices[:3]
        mg = build_message_graph(g, queries)
        assert np.array_equal(mg.pair_indices, g.pair_indices)
        assert mg.is_noisy.all()
        assert mg.is_query.sum() == 3
        assert np.array_equal(mg.edge_labels, g.edge_labels)

    def test_empty_noisy_graph(self, labeled_spec):
        rng = np.random.default_rng(6)
        g = random_graph(6, labeled_spec, 0.0, rng)
        queries = np.array([0, 4, 9])
        mg = build_message_graph(g, queries)
        assert np.array_equal(mg.pair_indices, queries)
        assert np.all(mg.edge_labels == 0)
        assert mg.is_query.all()
        assert not mg.is_noisy.any()

    def test_union_cardinality(self, labeled_spec):
        rng = np.random.default_rng(7)
        for _ in range(50):
            g = random_graph(7, labeled_spec, 0.4, rng)
            total = num_pairs(7)
            queries = np.sort(rng.choice(total, size=int(rng.integers(1, 12)),
                                         replace=False))
            mg = build_message_graph(g, queries)
            overlap = len(np.intersect1d(g.pair_indices, queries))
            assert mg.num_edges == g.num_edges + len(queries) - overlap
            # flags and labels stay consistent with the sources
            assert np.array_equal(mg.pair_indices[mg.is_query], queries)
            noisy_rows = mg.is_noisy
            assert np.array_equal(mg.pair_indices[noisy_rows], g.pair_indices)
            assert np.array_equal(mg.edge_labels[noisy_rows], g.edge_labels)
            assert (mg.is_noisy | mg.is_query).all()

    def test_unbiased_loss_estimator(self, plain_spec):
        # E over query draws of the rescaled query loss equals the dense
        # all-pairs loss (the property motivating per-graph query sampling)
        rng = np.random.default_rng(8)
        g = random_graph(6, plain_spec, 0.4, rng)
        total = num_pairs(6)
        slot_probs = rng.dirichlet(np.ones(2), size=total)
        node_probs = np.ones((6, 1))
        dense = dense_all_pairs_edge_loss(g, slot_probs, edge_weight=5.0)
        draws = 100_000
        for sparsity in (0.2, 0.5):
            acc = 0.0
            for _ in range(draws):
                qp = sample_query_pairs(6, sparsity, rng)
                pred = Prediction(node_probs, qp, slot_probs[qp])
                acc += loss(pred, g, edge_weight=5.0).edge_term
            assert abs(acc / draws - dense) / dense < 0.01
